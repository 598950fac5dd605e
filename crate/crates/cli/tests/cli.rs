//! End-to-end tests of the `elcrf` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use elcrf::potentials::TransitionFactors;
use elcrf::ModelParams;
use tempfile::TempDir;

fn elcrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elcrf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Words determine labels: `p*` is a person, `l*` a location, `w*` outside.
fn separable_conll(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        for j in 0..(3 + i % 4) {
            let r = (i * 7 + j * 3) % 5;
            let line = match r {
                0 => format!("p{} B-PER\n", (i + j) % 3),
                1 => format!("l{} B-LOC\n", (i * j) % 3),
                _ => format!("w{} O\n", (i + 2 * j) % 4),
            };
            out.push_str(&line);
        }
        out.push('\n');
    }
    out
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    /// Trains on separable data and returns the model path.
    fn trained_model(&self, name: &str, epochs: &str, extra: &[&str]) -> PathBuf {
        let train = self.write("sep.conll", &separable_conll(40));
        let model = self.path(name);
        let mut args = vec![
            "train",
            "--train",
            path_str(&train),
            "--model",
            path_str(&model),
            "--epochs",
            epochs,
            "--lr",
            "0.05",
            "--dropout",
            "0",
            "--emb-dim",
            "8",
            "--window",
            "1",
            "--factor-size",
            "4",
            "--seed",
            "5",
        ];
        args.extend_from_slice(extra);
        let o = elcrf(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        model
    }
}

const TINY: &str = "John B-PER\nruns O\n\nMary B-PER\nLee I-PER\nsits O\n\n";

#[test]
fn train_one_epoch_writes_model_and_log() {
    let f = Fixture::new();
    let train = f.write("tiny.conll", TINY);
    let model = f.path("m.json");
    let o = elcrf(&[
        "train", "--train", path_str(&train), "--model", path_str(&model), "--epochs", "1", "--emb-dim", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(model.exists());
    let log = f.read("m.json.log.tsv");
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("epoch\tmean_nll\tdev_f1\tlr"));
    assert!(lines[1].starts_with("1\t"));
}

#[test]
fn missing_train_file_is_a_usage_error() {
    let f = Fixture::new();
    let model = f.path("m.json");
    let o = elcrf(&["train", "--train", path_str(&f.path("absent.conll")), "--model", path_str(&model)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.conll"));
    assert!(!model.exists());
}

#[test]
fn too_few_hidden_states_is_a_usage_error() {
    let f = Fixture::new();
    let train = f.write("tiny.conll", TINY);
    let model = f.path("m.json");
    let o = elcrf(&[
        "train", "--train", path_str(&train), "--model", path_str(&model), "--hidden-states", "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!model.exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let f = Fixture::new();
    let train = f.write("tiny.conll", TINY);
    let dev = f.write("dev.conll", TINY);
    let run = |name: &str| {
        let model = f.path(name);
        let o = elcrf(&[
            "train", "--train", path_str(&train), "--dev", path_str(&dev), "--model", path_str(&model),
            "--epochs", "3", "--emb-dim", "4", "--seed", "11",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(&model).unwrap(), f.read(&format!("{name}.log.tsv")))
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn config_file_and_flag_precedence() {
    let f = Fixture::new();
    let train = f.write("tiny.conll", TINY);
    let cfg = f.write("run.cfg", "# tiny run\nepochs = 2\nlr = 0.3\nemb_dim = 4\n");
    let model = f.path("m.json");
    let log = f.path("log.tsv");
    let o = elcrf(&[
        "train", "--train", path_str(&train), "--model", path_str(&model), "--config", path_str(&cfg),
        "--lr", "0.2", "--lr-decay", "0", "--out", path_str(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = f.read("log.tsv").lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split('\t').nth(3) == Some("0.200000")));
    assert_eq!(ModelParams::load_file(&model).unwrap().config.emb_dim, 4);

    let bad = f.write("bad.cfg", "epochs = 2\nlearnrate = 0.1\n");
    let o = elcrf(&["train", "--train", path_str(&train), "--model", path_str(&model), "--config", path_str(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learnrate"));
}

#[test]
fn tagging_training_data_reproduces_gold() {
    let f = Fixture::new();
    let model = f.trained_model("m.json", "15", &[]);
    let tagged = f.path("tagged.conll");
    let o = elcrf(&[
        "tag", "--model", path_str(&model), "--test", path_str(&f.path("sep.conll")), "--out", path_str(&tagged),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = f.read("tagged.conll");
    assert_eq!(text.split("\n\n").filter(|b| !b.trim().is_empty()).count(), 40);
    for line in text.lines().filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols.len(), 3, "{line}");
        assert_eq!(cols[1], cols[2], "{line}");
    }
}

#[test]
fn tagging_empty_input_gives_empty_output() {
    let f = Fixture::new();
    let model = f.trained_model("m.json", "1", &[]);
    let empty = f.write("empty.conll", "");
    let o = elcrf(&["tag", "--model", path_str(&model), "--test", path_str(&empty)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn corrupted_model_is_rejected() {
    let f = Fixture::new();
    let input = f.write("in.conll", "John\n");
    let garbage = f.write("bad.json", "{\"format\": \"elcrf-model\", \"version\": 99");
    let o = elcrf(&["tag", "--model", path_str(&garbage), "--test", path_str(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"));

    let model = f.trained_model("m.json", "1", &[]);
    let text = std::fs::read_to_string(&model).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    let future = f.write("future.json", &text);
    let o = elcrf(&["tag", "--model", path_str(&future), "--test", path_str(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
}

#[test]
fn eval_reports_segment_f1() {
    let f = Fixture::new();
    let gold = f.write("gold.conll", "a B-PER\nb O\nc B-LOC\n\n");
    let o = elcrf(&["eval", "--test", path_str(&gold), "--pred", path_str(&gold)]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("overall") && l.contains("100.00")));

    let half = f.write("half.conll", "a B-PER B-PER\nb O O\nc B-LOC O\n\n");
    let kv = f.path("report.txt");
    let o = elcrf(&["eval", "--test", path_str(&gold), "--pred", path_str(&half), "--out", path_str(&kv)]);
    assert!(o.status.success());
    let overall = stdout(&o).lines().find(|l| l.starts_with("overall")).unwrap().to_string();
    let cols: Vec<&str> = overall.split_whitespace().collect();
    assert_eq!(cols, ["overall", "100.00", "50.00", "66.67", "2"]);
    let kv = f.read("report.txt");
    assert!(kv.contains("overall.recall=50.0000"));
    assert!(kv.contains("entity.LOC.support=1"));
}

#[test]
fn eval_comparison_sorts_by_improvement() {
    let f = Fixture::new();
    let gold = f.write("gold.conll", "a B-PER\nb O\nc B-LOC\nd B-ORG\n\n");
    let base = f.write("base.conll", "a B-PER\nb O\nc O\nd O\n\n");
    let cand = f.write("cand.conll", "a O\nb O\nc B-LOC\nd B-ORG\n\n");
    let o = elcrf(&["eval", "--test", path_str(&gold), "--pred", path_str(&base), "--compare", path_str(&cand)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kinds: Vec<String> = stdout(&o)
        .lines()
        .skip(2)
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(kinds, ["LOC", "ORG", "PER"]);
}

#[test]
fn misaligned_predictions_name_the_sequence() {
    let f = Fixture::new();
    let gold = f.write("gold.conll", "a O\n\nb B-X\nc O\n\n");
    let pred = f.write("pred.conll", "a O\n\nb B-X\n\n");
    let o = elcrf(&["eval", "--test", path_str(&gold), "--pred", path_str(&pred)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sequence 2"), "{}", stderr(&o));
}

#[test]
fn eval_with_model_and_leave_one_out() {
    let f = Fixture::new();
    let model = f.trained_model("m.json", "15", &[]);
    let o = elcrf(&["eval", "--test", path_str(&f.path("sep.conll")), "--model", path_str(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("overall") && l.contains("100.00")));

    let docs = format!("-DOCSTART- O\n\n{}-DOCSTART- O\n\n{}", separable_conll(6), separable_conll(4));
    let corpus = f.write("docs.conll", &docs);
    let loo = |jobs: &str| {
        let o = elcrf(&[
            "eval", "--loo", "--train", path_str(&corpus), "--epochs", "3", "--emb-dim", "4", "--jobs", jobs,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(loo("1"), loo("2"));
}

#[test]
fn synth_is_deterministic() {
    let f = Fixture::new();
    let run = |name: &str| {
        let out = f.path(name);
        let o = elcrf(&["synth", "--kind", "exactly-once", "--sequences", "25", "--seed", "4", "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        f.read(name)
    };
    let a = run("a.conll");
    assert_eq!(a, run("b.conll"));
    let corpus = elcrf::data::conll::read_conll(a.as_bytes(), false).unwrap();
    assert_eq!(corpus.len(), 25);
    let o = elcrf(&["synth", "--kind", "sometimes"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tag_output_does_not_depend_on_jobs() {
    let f = Fixture::new();
    let model = f.trained_model("m.json", "2", &[]);
    let input = f.path("sep.conll");
    let run = |jobs: &str| {
        let o = elcrf(&["tag", "--model", path_str(&model), "--test", path_str(&input), "--jobs", jobs]);
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn inspect_dumps_state_embeddings() {
    let f = Fixture::new();
    let model_path = f.trained_model("m.json", "1", &["--hidden-states", "10"]);
    let o = elcrf(&["inspect", "--model", path_str(&model_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 10);
    let model = ModelParams::load_file(&model_path).unwrap();
    let TransitionFactors::Factorized { u, v } = &model.transitions else { panic!("factorized model expected") };
    for (z, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 2 + 2 * 4);
        assert_eq!(row[0], z.to_string());
        assert_eq!(row[1], model.schema.label(model.states.label_of(z)));
        let coords: Vec<f64> = row[2..].iter().map(|x| x.parse().unwrap()).collect();
        let expected: Vec<f64> = u.column(z).iter().chain(v.column(z).iter()).copied().collect();
        assert_eq!(coords, expected);
    }
}

#[test]
fn inspect_refuses_full_rank_models() {
    let f = Fixture::new();
    let model = f.trained_model("m.json", "1", &["--full-rank"]);
    let o = elcrf(&["inspect", "--model", path_str(&model)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("full-rank"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(elcrf(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(elcrf(&[]).status.code(), Some(2));
    assert_eq!(elcrf(&["eval"]).status.code(), Some(2));
}
