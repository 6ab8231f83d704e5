#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

pub struct Outcome {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl Outcome {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.stdout).expect("stdout is a JSON report")
    }
}

pub fn run<S: AsRef<str>>(args: &[S]) -> Outcome {
    let argv = std::iter::once("fairlens".to_string()).chain(args.iter().map(|a| a.as_ref().to_string()));
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = fairlens_cli::run_with(argv, &mut stdout, &mut stderr);
    Outcome {
        code,
        stdout,
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

/// One invocation of every subcommand over the bundled fixtures.
pub fn every_subcommand() -> Vec<Vec<String>> {
    let f = fixture;
    let raw: Vec<Vec<String>> = vec![
        vec!["mask".into(), "--pred".into(), f("predictions.jsonl"), "--refs".into(), f("captions.jsonl")],
        vec!["label".into(), "--refs".into(), f("captions.jsonl")],
        vec!["error".into(), "--pred".into(), f("predictions.jsonl"), "--refs".into(), f("captions.jsonl")],
        vec!["lic".into(), "--pred".into(), f("predictions.jsonl"), "--refs".into(), f("captions.jsonl")],
        vec![
            "biasamp".into(), "--train".into(), f("train_captions.jsonl"), "--pred".into(),
            f("predictions.jsonl"), "--words".into(), f("words.txt"),
        ],
        vec!["chair".into(), "--pred".into(), f("predictions.jsonl"), "--annotations".into(), f("annotations.jsonl")],
        vec![
            "hitratio".into(), "--pred".into(), f("predictions.jsonl"), "--refs".into(), f("captions.jsonl"),
            "--annotations".into(), f("annotations.jsonl"), "--train".into(), f("train_captions.jsonl"),
            "--anchor".into(), "surfboard,dining table".into(),
        ],
        vec!["retrieval".into(), "--rankings".into(), f("rankings.jsonl"), "--catalog".into(), f("catalog.jsonl")],
        vec!["resolution".into(), "--instances".into(), f("resolution.jsonl")],
        vec!["vlbias".into(), "--dump".into(), f("vlbias.jsonl")],
        vec![
            "report".into(), "--pred".into(), f("predictions.jsonl"), "--refs".into(), f("captions.jsonl"),
            "--annotations".into(), f("annotations.jsonl"), "--train".into(), f("train_captions.jsonl"),
            "--top-n".into(), "40".into(), "--stoplist".into(), f("stoplist.txt"),
        ],
    ];
    raw
}
