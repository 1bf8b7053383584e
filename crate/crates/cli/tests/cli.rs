use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const EXE: &str = env!("CARGO_BIN_EXE_wordattr");

const CORPUS: &str = r#"{"id":"a","text":"We should not give up. Together people can achieve it!","label":"pos","highlights":{"r1":[[23,31]],"r2":[[3,13]]}}
{"id":"b","text":"They don't help and never try at home.","label":"neg","highlights":{"r1":[[0,4]]}}
{"id":"c","text":"unmotivated people lose","label":"neg","highlights":{"r2":[[0,11]]}}
{"id":"d","text":"great team great work","label":"pos"}
"#;

fn wordattr(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work {
            dir: tempfile::tempdir().unwrap(),
        };
        w.write("corpus.jsonl", CORPUS);
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn write(&self, name: &str, text: &str) -> String {
        std::fs::write(self.path(name), text).unwrap();
        self.p(name)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }
}

fn assert_same_files(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        let x = std::fs::read(a.join(n)).unwrap();
        let y = std::fs::read(b.join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }
}

fn scores(jsonl: &str) -> Vec<Vec<f64>> {
    jsonl
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["scores"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| s.as_f64().unwrap())
                .collect()
        })
        .collect()
}

#[test]
fn attribute_writes_jsonl_report_and_config() {
    let w = Work::new();
    let cfg = w.write("c.json", r#"{"steps": 50}"#);
    let o = wordattr(&[
        "attribute",
        "--config",
        &cfg,
        &w.p("corpus.jsonl"),
        "-o",
        &w.p("out"),
        "--ansi",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = w
        .read("out/attributions.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ids: Vec<&str> = lines.iter().map(|l| l["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b", "c", "d"]);
    assert_eq!(lines[0]["config"]["quadrature"]["kind"], "paper-eq6");
    assert_eq!(lines[0]["config"]["quadrature"]["steps"], 50);
    assert!(w.read("out/report.html").contains("<span"));
    let frozen: serde_json::Value = serde_json::from_str(&w.read("out/config.json")).unwrap();
    assert_eq!(frozen["steps"], 50);
    assert_eq!(frozen["quadrature"], "paper-eq6");
    assert_eq!(frozen["oracle"]["kind"], "builtin");
    assert!(String::from_utf8_lossy(&o.stdout).contains("\x1b["));
}

#[test]
fn reruns_are_byte_identical() {
    let w = Work::new();
    let cfg = w.write(
        "c.json",
        r#"{"steps": 20, "method": "gradshap", "gradshap": {"samples": 8}, "seed": 3,
            "sweep": {"methods": ["ig", "gradshap"], "baselines": ["zero", "mask"]}}"#,
    );
    let corpus = w.p("corpus.jsonl");
    for (cmd, files) in [
        ("attribute", &["attributions.jsonl", "report.html"][..]),
        ("faithfulness", &["faithfulness.csv", "faithfulness_summary.csv"][..]),
        (
            "highlights",
            &["highlights.csv", "highlight_slopes.csv", "f_h_histogram.csv"][..],
        ),
    ] {
        let one = w.p(&format!("{cmd}-1"));
        let many = w.p(&format!("{cmd}-4"));
        let o = wordattr(&["--threads", "1", cmd, "--config", &cfg, &corpus, "-o", &one]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let o = wordattr(&["--threads", "4", cmd, "--config", &cfg, &corpus, "-o", &many]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert_same_files(Path::new(&one), Path::new(&many), files);
    }
}

#[test]
fn missing_corpus_exits_1_naming_the_path() {
    let w = Work::new();
    let missing = w.p("nope.jsonl");
    let o = wordattr(&["attribute", &missing]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));
}

#[test]
fn corpus_problems() {
    let w = Work::new();
    let dup = w.write(
        "dup.jsonl",
        "{\"id\":\"x\",\"text\":\"go!\"}\n{\"id\":\"x\",\"text\":\"again\"}\n",
    );
    let o = wordattr(&["attribute", &dup, "-o", &w.p("o1")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duplicate record ids: x"), "{}", stderr(&o));

    let mixed = w.write(
        "mixed.jsonl",
        "{\"id\":\"1\",\"text\":\"see https://x.y now\"}\nnot json\n{\"id\":\"2\",\"text\":\"go!\"}\n",
    );
    let o = wordattr(&["attribute", &mixed, "-o", &w.p("o2")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("mixed.jsonl:2:"), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = w
        .read("o2/attributions.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["tokens"]["source"], "see now");

    let bad = w.write("bad.jsonl", "nope\n{\"text\":\"no id\"}\n");
    let o = wordattr(&["attribute", &bad, "-o", &w.p("o3")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("malformed"), "{}", stderr(&o));
}

#[test]
fn invalid_settings_fail_before_the_oracle_starts() {
    let w = Work::new();
    // The command does not exist; exit 1 (not 2) shows it was never spawned.
    let cfg = w.write(
        "c.json",
        r#"{"oracle": {"kind": "external", "command": "/nonexistent/oracle"}, "method": "deeplift"}"#,
    );
    let o = wordattr(&["attribute", "--config", &cfg, &w.p("corpus.jsonl"), "-o", &w.p("out")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("deeplift"), "{}", stderr(&o));
    assert!(!w.path("out").exists());

    let cfg = w.write("typo.json", r#"{"baselin": "mask"}"#);
    let o = wordattr(&["attribute", "--config", &cfg, &w.p("corpus.jsonl")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
}

#[test]
fn baseline_the_oracle_cannot_build_is_a_validation_error() {
    let w = Work::new();
    let cfg = w.write(
        "c.json",
        &format!(
            r#"{{"oracle": {{"kind": "external", "command": "{EXE} serve-oracle --fixture sum --dim 4"}}, "baseline": "mask"}}"#
        ),
    );
    let o = wordattr(&["attribute", "--config", &cfg, &w.p("corpus.jsonl"), "-o", &w.p("out")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MASK"), "{}", stderr(&o));
}

#[test]
fn oracle_check_prints_the_descriptor() {
    let o = wordattr(&[
        "oracle-check",
        "--external",
        &format!("{EXE} serve-oracle --fixture sum --dim 8"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    let json_end = out.find("\n}").unwrap() + 2;
    let d: serde_json::Value = serde_json::from_str(&out[..json_end]).unwrap();
    assert_eq!(d["dim"], 8);
    assert_eq!(d["version"], 1);
    assert_eq!(d["head"], "scalar");
    assert!(out.contains("gradient"), "{out}");

    let o = wordattr(&["oracle-check", "--external", "/nonexistent/oracle"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn external_oracle_reproduces_builtin_attributions() {
    let w = Work::new();
    let corpus = w.p("corpus.jsonl");
    let builtin = w.write("b.json", r#"{"steps": 30, "baseline": "mask"}"#);
    let external = w.write(
        "e.json",
        &format!(
            r#"{{"steps": 30, "baseline": "mask", "oracle": {{"kind": "external", "command": "{EXE} serve-oracle --config {builtin} --corpus {corpus}"}}}}"#
        ),
    );
    let o = wordattr(&["attribute", "--config", &builtin, &corpus, "-o", &w.p("b")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = wordattr(&[
        "--threads",
        "2",
        "attribute",
        "--config",
        &external,
        &corpus,
        "-o",
        &w.p("e"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (b, e) = (
        scores(&w.read("b/attributions.jsonl")),
        scores(&w.read("e/attributions.jsonl")),
    );
    assert_eq!(b.len(), e.len());
    for (x, y) in b.iter().zip(&e) {
        assert_eq!(x.len(), y.len());
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
        }
    }
}

#[test]
fn render_rebuilds_the_report() {
    let w = Work::new();
    let o = wordattr(&["attribute", &w.p("corpus.jsonl"), "-o", &w.p("a")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = wordattr(&["render", &w.p("a/attributions.jsonl"), "-o", &w.p("r"), "--ansi"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(w.read("a/report.html"), w.read("r/report.html"));
    assert!(w.path("r/config.json").exists());

    let cfg = w.write("c.json", r#"{"render": {"linking": "none", "title": "Plain"}}"#);
    let o = wordattr(&[
        "render",
        "--config",
        &cfg,
        &w.p("a/attributions.jsonl"),
        "-o",
        &w.p("r2"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(w.read("r2/report.html").contains("<title>Plain</title>"));
}

#[test]
fn extract_writes_keyword_tables_and_model() {
    let w = Work::new();
    let cfg = w.write("c.json", r#"{"steps": 50, "extract": {"k": 3}}"#);
    let o = wordattr(&["extract", "--config", &cfg, &w.p("corpus.jsonl"), "-o", &w.p("x")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = w.read("x/keywords.csv");
    assert!(table.starts_with("class,rank,word,score,doc_freq\n"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("pos,1,")));
    assert!(table.lines().any(|l| l.starts_with("neg,1,")));
    assert!(w.read("x/keywords.html").contains("<table"));

    // The trained model can be attributed against its class head.
    let model = w.p("x/model.json");
    let cfg = w.write(
        "m.json",
        &format!(r#"{{"steps": 20, "oracle": {{"kind": "builtin", "params": "{model}"}}, "target": {{"class": 1}}}}"#),
    );
    let o = wordattr(&["attribute", "--config", &cfg, &w.p("corpus.jsonl"), "-o", &w.p("m")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = w.write(
        "m2.json",
        &format!(r#"{{"oracle": {{"kind": "builtin", "params": "{model}"}}}}"#),
    );
    let o = wordattr(&["attribute", "--config", &cfg, &w.p("corpus.jsonl"), "-o", &w.p("m2")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("class"), "{}", stderr(&o));
}

#[test]
fn highlights_outputs() {
    let w = Work::new();
    let cfg = w.write("c.json", r#"{"steps": 30, "highlights": {"grouping": "per-reader"}}"#);
    let o = wordattr(&["highlights", "--config", &cfg, &w.p("corpus.jsonl"), "-o", &w.p("h")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = w.read("h/highlights.csv");
    assert!(rows.starts_with("document_id,sentence,reader,words,highlighted,a,f_h,a_h,a_max,noise\n"));
    assert_eq!(rows.lines().count(), 1 + 4);
    let slopes = w.read("h/highlight_slopes.csv");
    assert_eq!(slopes.lines().filter(|l| l.starts_with("r1,")).count(), 10);
    assert_eq!(slopes.lines().filter(|l| l.starts_with("r2,")).count(), 10);
    assert_eq!(w.read("h/f_h_histogram.csv").lines().count(), 11);

    let plain = w.write("plain.jsonl", "{\"id\":\"1\",\"text\":\"no spans here\"}\n");
    let o = wordattr(&["highlights", &plain, "-o", &w.p("h2")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("highlight"), "{}", stderr(&o));
}
