use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moegeom_core::interchange::{read_index, read_report_file, DumpContainer, DumpHeader};
use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = r#"{
  "n_layers": 2, "n_experts": 4, "d_model": 16, "d_hidden": 32,
  "block_size": 16, "batch_size": 4, "n_heads": 4, "seed": 3, "learning_rate": 0.003
}"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..400)
            .map(|i| {
                format!(
                    "line {i}: the quick brown fox {} jumps over {} lazy dogs.\n",
                    i * 7 % 13,
                    i % 5
                )
            })
            .collect();
        std::fs::write(dir.path().join("corpus.txt"), text).unwrap();
        std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_moegeom"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("MOEGEOM_OUT_DIR")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn train(&self, router: &str, name: &str, steps: usize) {
        let ckpt = format!("{name}.mgt");
        let dump = format!("{name}.dump.mgt");
        self.ok(&[
            "train",
            "--config",
            "tiny.json",
            "--corpus",
            "corpus.txt",
            "--steps",
            &steps.to_string(),
            "--router",
            router,
            "--out",
            &ckpt,
            "--capture",
            &dump,
            "--capture-tokens",
            "256",
        ]);
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn missing_corpus_is_an_input_error_naming_the_path() {
    let f = Fixture::new();
    let out = f.run(&["train", "--corpus", "nowhere/corpus.txt", "--steps", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere/corpus.txt"), "{}", stderr(&out));
}

#[test]
fn bad_router_spec_is_a_usage_error() {
    let f = Fixture::new();
    let out = f.run(&["train", "--corpus", "corpus.txt", "--steps", "1", "--router", "topk"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_writes_checkpoint_loss_trace_and_dump() {
    let f = Fixture::new();
    f.train("topk:2", "run", 7);
    let csv = std::fs::read_to_string(f.path("run.loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,loss,seed,router,toolkit_version");
    assert_eq!(lines.len(), 1 + 7);
    assert!(lines[1].starts_with("0,") && lines[1].contains(",3,topk:2,"));

    let ckpt = DumpContainer::from_bytes(&read(&f.path("run.mgt"))).unwrap();
    let dump = DumpContainer::from_bytes(&read(&f.path("run.dump.mgt"))).unwrap();
    for h in [&ckpt.header, &dump.header] {
        assert_eq!(h.extra["seed"], 3);
        assert_eq!(h.extra["config"]["n_experts"], 4);
        assert_eq!(h.extra["toolkit_version"], moegeom_cli::VERSION);
    }
    assert_eq!(dump.header.layers, vec![0, 1]);
    assert_eq!(dump.header.token_counts, vec![256, 256]);
    assert_eq!(dump.header.dtype, "f64");
}

#[test]
fn routers_give_distinct_checkpoints_from_one_seed() {
    let f = Fixture::new();
    f.train("topk:2", "a", 3);
    f.train("soft", "b", 3);
    f.train("topk:2", "c", 3);
    assert_ne!(read(&f.path("a.mgt")), read(&f.path("b.mgt")));
    assert_eq!(read(&f.path("a.mgt")), read(&f.path("c.mgt")));
}

#[test]
fn seed_flag_overrides_config() {
    let f = Fixture::new();
    f.ok(&[
        "--seed",
        "11",
        "train",
        "--config",
        "tiny.json",
        "--corpus",
        "corpus.txt",
        "--steps",
        "2",
        "--out",
        "s.mgt",
    ]);
    let c = DumpContainer::from_bytes(&read(&f.path("s.mgt"))).unwrap();
    assert_eq!(c.header.extra["seed"], 11);
    assert_eq!(c.header.extra["config"]["seed"], 11);
}

#[test]
fn dump_and_checkpoint_routes_give_identical_reports() {
    let f = Fixture::new();
    f.train("soft", "run", 5);
    f.ok(&["analyze", "--dump", "run.dump.mgt", "--out", "from_dump.json"]);
    f.ok(&[
        "analyze",
        "--checkpoint",
        "run.mgt",
        "--corpus",
        "corpus.txt",
        "--capture-tokens",
        "256",
        "--out",
        "from_ckpt.json",
    ]);
    assert_eq!(read(&f.path("from_dump.json")), read(&f.path("from_ckpt.json")));
    let file = read_report_file(&std::fs::read_to_string(f.path("from_dump.json")).unwrap()).unwrap();
    assert_eq!(file.reports.len(), 2);
    assert_eq!(file.reports[0].provenance.seed, Some(3));
    assert!(file.reports.iter().all(|r| r.jacobian.is_some()));
}

#[test]
fn single_layer_and_csv_panels() {
    let f = Fixture::new();
    f.train("topk:2", "run", 2);
    let stdout = f.ok(&[
        "analyze",
        "--dump",
        "run.dump.mgt",
        "--layer",
        "1",
        "--out",
        "l1.json",
        "--csv",
        "panels",
    ]);
    assert!(stdout.starts_with("layer 1:"));
    let file = read_report_file(&std::fs::read_to_string(f.path("l1.json")).unwrap()).unwrap();
    assert_eq!(file.reports.len(), 1);
    assert_eq!(file.reports[0].layer_id, 1);
    assert!(f.path("panels/layer1_grassmann_hist.csv").exists());
    assert!(f.path("panels/layer1_jacobian_matrix.csv").exists());

    let out = f.run(&["analyze", "--dump", "run.dump.mgt", "--layer", "5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn analyze_needs_exactly_one_source() {
    let f = Fixture::new();
    f.train("soft", "run", 1);
    let neither = f.run(&["analyze"]);
    assert_eq!(code(&neither), 2);
    let both = f.run(&[
        "analyze",
        "--dump",
        "run.dump.mgt",
        "--checkpoint",
        "run.mgt",
        "--corpus",
        "corpus.txt",
    ]);
    assert_eq!(code(&both), 2);
    let half = f.run(&["analyze", "--checkpoint", "run.mgt"]);
    assert_eq!(code(&half), 2);
}

#[test]
fn too_many_components_names_the_expert() {
    let f = Fixture::new();
    f.ok(&[
        "train",
        "--config",
        "tiny.json",
        "--corpus",
        "corpus.txt",
        "--steps",
        "1",
        "--router",
        "topk:1",
        "--out",
        "r.mgt",
        "--capture",
        "r.dump.mgt",
        "--capture-tokens",
        "32",
    ]);
    let out = f.run(&["analyze", "--dump", "r.dump.mgt", "--components", "20"]);
    assert_eq!(code(&out), 1);
    let msg = stderr(&out);
    assert!(msg.contains("insufficient data") && msg.contains("expert"), "{msg}");
}

#[test]
fn out_dir_environment_variable_sets_default_outputs() {
    let f = Fixture::new();
    f.train("soft", "run", 1);
    let out = Command::new(env!("CARGO_BIN_EXE_moegeom"))
        .args(["analyze", "--dump", "run.dump.mgt"])
        .current_dir(f.dir.path())
        .env("MOEGEOM_OUT_DIR", f.path("results"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(f.path("results/report.json").exists());
}

#[test]
fn compare_self_is_zero_and_topk_soft_is_recorded() {
    let f = Fixture::new();
    f.train("topk:2", "k", 3);
    f.train("soft", "s", 3);
    f.ok(&["analyze", "--dump", "k.dump.mgt", "--out", "k.json"]);
    f.ok(&["analyze", "--dump", "s.dump.mgt", "--out", "s.json"]);

    f.ok(&["compare", "--a", "k.json", "--b", "k.json", "--out", "self.json"]);
    let v: Value = serde_json::from_slice(&read(&f.path("self.json"))).unwrap();
    for l in v["layers"].as_array().unwrap() {
        assert_eq!(l["grassmann_delta"], 0.0);
        assert_eq!(l["jacobian_delta"], 0.0);
    }

    f.ok(&["compare", "--a", "k.json", "--b", "s.json", "--out", "ks.json"]);
    let v: Value = serde_json::from_slice(&read(&f.path("ks.json"))).unwrap();
    assert_eq!(v["toolkit_version"], moegeom_cli::VERSION);
    assert_eq!(v["provenance"].as_array().unwrap().len(), 2);
    assert_eq!(v["layers"].as_array().unwrap().len(), 2);
}

#[test]
fn compare_reports_parse_offset_and_incompatibility() {
    let f = Fixture::new();
    std::fs::write(f.path("bad.json"), "{\"schema\": 1, \"reports\": [oops]}").unwrap();
    std::fs::write(f.path("empty.json"), "{\"schema\": 1, \"reports\": []}").unwrap();
    let out = f.run(&["compare", "--a", "bad.json", "--b", "empty.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("at byte 26"), "{}", stderr(&out));

    f.train("soft", "run", 1);
    f.ok(&["analyze", "--dump", "run.dump.mgt", "--out", "n5.json"]);
    f.ok(&[
        "analyze",
        "--dump",
        "run.dump.mgt",
        "--components",
        "3",
        "--out",
        "n3.json",
    ]);
    let out = f.run(&["compare", "--a", "n5.json", "--b", "n3.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("incompatible"), "{}", stderr(&out));
}

#[test]
fn inspect_lists_sections_from_the_writer_index() {
    let f = Fixture::new();
    f.train("topk:2", "run", 1);
    let bytes = read(&f.path("run.dump.mgt"));
    let (_, index) = read_index(&bytes).unwrap();
    let text = f.ok(&["inspect", "--dump", "run.dump.mgt"]);
    assert!(text.contains(&format!("{} tensor sections", index.len())));
    for e in &index {
        let row = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(e.name.as_str()))
            .unwrap();
        assert!(
            row.contains(&e.offset.to_string()) && row.contains(&e.length.to_string()),
            "{row}"
        );
    }
    assert!(text.contains("layer 1: 256 tokens"));
}

#[test]
fn inspect_header_only_and_corrupt_files() {
    let f = Fixture::new();
    let empty = DumpContainer::new(DumpHeader::default()).to_bytes().unwrap();
    std::fs::write(f.path("empty.mgt"), &empty).unwrap();
    assert!(f.ok(&["inspect", "--dump", "empty.mgt"]).contains("0 tensor sections"));

    let mut bad = empty.clone();
    bad[0] = b'X';
    std::fs::write(f.path("bad.mgt"), bad).unwrap();
    let out = f.run(&["inspect", "--dump", "bad.mgt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not an MGT1 file"));

    std::fs::write(f.path("cut.mgt"), &empty[..empty.len() - 3]).unwrap();
    assert_eq!(code(&f.run(&["inspect", "--dump", "cut.mgt"])), 2);
}
