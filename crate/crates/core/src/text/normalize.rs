use unicode_normalization::UnicodeNormalization;

const EXTRA_PUNCT: &[char] = &[
    '“', '”', '‘', '’', '«', '»', '„', '…', '—', '–', '¿', '¡', '。', '，', '、', '！', '？', '：',
    '；', '（', '）', '《', '》', '【', '】',
];

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCT.contains(&c)
}

/// NFC, punctuation detached into its own token, whitespace collapsed to
/// single spaces. Periods and commas between digits stay attached.
pub fn normalize(s: &str) -> String {
    let chars: Vec<char> = s.nfc().filter(|c| !c.is_control() || c.is_whitespace()).collect();
    let mut out = String::with_capacity(s.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            out.push(' ');
            continue;
        }
        let numeric_sep = (c == '.' || c == ',')
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if is_punct(c) && !numeric_sep {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokens of the normalised sentence.
pub fn words(s: &str) -> Vec<String> {
    normalize(s).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detaches_punctuation_and_collapses_space() {
        assert_eq!(normalize("  Hello,   world!\t"), "Hello , world !");
        assert_eq!(normalize("pi is 3.14, ok"), "pi is 3.14 , ok");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn composes_to_nfc() {
        assert_eq!(normalize("e\u{301}te\u{301}"), "été");
    }

    #[test]
    fn idempotent() {
        let s = "  «Quoi?» dit-il... 1,5 km; (ok)  ";
        assert_eq!(normalize(&normalize(s)), normalize(s));
    }
}
