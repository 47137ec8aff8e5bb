//! The CLI stages chained in-process: BPE, training, translation, scoring
//! and a report, each writing into its own directory.

use nmtkit::cli::{run_pipeline, ExperimentConfig, StageSpec};
use nmtkit::synth::{CipherSpec, CipherWorld};
use rand::SeedableRng;
use serde_json::json;

fn stage(name: &str, command: &str, after: &[&str], config: serde_json::Value) -> StageSpec {
    StageSpec {
        name: name.into(),
        command: command.into(),
        after: after.iter().map(|s| s.to_string()).collect(),
        config: config.as_object().cloned().unwrap_or_default(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("nmtkit-pipeline-example");
    std::fs::create_dir_all(&dir)?;
    let world = CipherWorld::new(&["de", "en"], CipherSpec::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for (split, n) in [("train", 1000), ("test", 50)] {
        let sides = world.parallel(&[0, 1], n, &mut rng);
        for (lang, side) in ["de", "en"].iter().zip(&sides) {
            let text: String = side.iter().map(|s| world.spell(s) + "\n").collect();
            std::fs::write(dir.join(format!("{split}.{lang}")), text)?;
        }
    }
    let d = |f: &str| dir.join(f);
    let out = dir.join("run");
    let cfg = ExperimentConfig {
        seed: 1,
        out: out.clone(),
        stages: vec![
            stage("01-bpe", "learn-bpe", &[], json!({"corpus": {"de": d("train.de"), "en": d("train.en")}, "merges": 400})),
            stage("02-train", "train", &["01-bpe"], json!({
                "tokenizer": "@01-bpe",
                "model": {"width": 32, "ffn_width": 64},
                "task": {"mode": "supervised", "src": d("train.de"), "tgt": d("train.en"), "src_lang": "de", "tgt_lang": "en"},
                "steps": 300,
                "batch_size": 32,
                "test": {"src": d("test.de"), "reference": d("test.en"), "src_lang": "de", "tgt_lang": "en"},
            })),
            stage("03-translate", "translate", &["02-train"], json!({
                "tokenizer": "@01-bpe",
                "checkpoint": "@02-train/checkpoint.ck",
                "input": d("test.de"),
                "src_lang": "de",
                "tgt_lang": "en",
                "beam": 4,
            })),
            stage("04-score", "score", &["03-translate"], json!({"hyp": "@03-translate/translations.txt", "reference": d("test.en")})),
            stage("05-report", "report", &["04-score"], json!({"run_dir": out})),
        ],
    };
    run_pipeline(&cfg)?;
    print!("{}", std::fs::read_to_string(out.join("05-report/report.csv"))?);
    Ok(())
}
