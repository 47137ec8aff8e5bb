//! Pick the training sentences most similar to a small in-domain query
//! set by BM25 cosine similarity.

use nmtkit::retrieval::{select_topk, Bm25Index, Bm25Params, TopKMode};

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus: Vec<Vec<String>> = [
        "the patient was given a dose of aspirin",
        "stock prices fell sharply on monday",
        "the doctor prescribed a higher dose",
        "the match ended in a draw",
        "side effects of the drug include nausea",
        "markets rallied after the announcement",
    ]
    .iter()
    .map(|s| tokens(s))
    .collect();
    let queries = vec![tokens("the drug dose for the patient"), tokens("nausea after aspirin")];
    let index = Bm25Index::build(&corpus, Bm25Params::default())?;
    for mode in [TopKMode::GlobalPool, TopKMode::PerQuery] {
        let sel = select_topk(&index, &queries, 3, mode)?;
        println!("{mode:?}");
        for (i, s) in sel.indices.iter().zip(&sel.scores) {
            println!("  {s:.3}  {}", corpus[*i].join(" "));
        }
    }
    Ok(())
}
