use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qmatch::data::{load_groups, Manifest, Task};
use qmatch::model::MatchModel;
use qmatch::text::Stoplist;

const BIN: &str = env!("CARGO_BIN_EXE_qmatch");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/quora_100.tsv")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "qmatch {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn build_quora(dir: &Path, seed: &str) {
    ok(&[
        "build-dataset",
        "--input",
        p(&fixture()),
        "--out-dir",
        p(dir),
        "--seed",
        seed,
        "--depth",
        "50",
    ]);
}

const TINY: &[&str] = &[
    "--embed-dim",
    "6",
    "--hidden",
    "5",
    "--filters",
    "3",
    "--join-hidden",
    "4",
    "--epochs",
    "1",
    "--eval-every",
    "5",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Manifest {
    let mut args = vec!["train", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
    Manifest::load(out.join("manifest.txt")).unwrap()
}

#[test]
fn missing_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "build-dataset",
        "--input",
        p(&dir.path().join("absent.tsv")),
        "--out-dir",
        p(&dir.path().join("ds")),
    ]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.tsv"));
}

#[test]
fn quora_fixture_builds_groups_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    build_quora(&ds, "3");

    // Independent count of the well-formed duplicate rows.
    let text = fs::read_to_string(fixture()).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let well_formed = |r: &Vec<&str>| r.len() == 6 && r[..3].iter().all(|f| f.parse::<u64>().is_ok());
    let dups = rows.iter().filter(|r| well_formed(r) && r[5] == "1").count();
    let pairs = rows.iter().filter(|r| well_formed(r) && (r[5] == "0" || r[5] == "1")).count();

    let m = Manifest::load(ds.join("manifest.txt")).unwrap();
    assert_eq!(m.get("task"), Some("retrieval"));
    assert_eq!(m.get("seed"), Some("3"));
    assert_eq!(m.get("input.pairs"), Some(pairs.to_string().as_str()));
    assert_eq!(m.get("input.rows_bad_label"), Some("1"));
    assert_eq!(m.get("input.rows_malformed"), Some("1"));
    assert_eq!(m.get("groups"), Some(dups.to_string().as_str()));
    assert_eq!(m.get("config_hash").unwrap().len(), 64);

    let mut total = 0;
    let mut seen = HashSet::new();
    for split in ["train", "dev", "test"] {
        let groups = load_groups(ds.join(format!("{split}.tsv")), Task::Retrieval).unwrap();
        assert_eq!(m.get(&format!("groups.{split}")), Some(groups.len().to_string().as_str()));
        for g in &groups {
            assert!(g.positive().is_some());
            assert!(g.candidates.len() <= 5);
            assert!(seen.insert(g.query_id));
        }
        total += groups.len();
    }
    assert_eq!(total, dups);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    build_quora(&a, "9");
    build_quora(&b, "9");
    for f in ["train.tsv", "dev.tsv", "test.tsv", "questions.tsv", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let (ma, mb) = (dir.path().join("ma"), dir.path().join("mb"));
    train(&a, &ma, &[]);
    train(&a, &mb, &[]);
    for f in ["model.ckpt", "vocab.txt", "history.csv", "manifest.txt"] {
        assert_eq!(fs::read(ma.join(f)).unwrap(), fs::read(mb.join(f)).unwrap(), "{f}");
    }

    let (ea, eb) = (dir.path().join("ea"), dir.path().join("eb"));
    for e in [&ea, &eb] {
        ok(&[
            "eval",
            "--data",
            p(&a),
            "--methods",
            "bm25,trlm,neural,combined",
            "--model",
            p(&ma),
            "--out",
            p(e),
        ]);
    }
    for f in ["metrics.csv", "per_query/neural.csv", "per_query/combined.csv"] {
        assert_eq!(fs::read(ea.join(f)).unwrap(), fs::read(eb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn retrieval_training_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    build_quora(&ds, "1");
    let m = train(&ds, &dir.path().join("m"), &[]);
    assert_eq!(m.get("config.lr"), Some("0.002"));
    assert_eq!(m.get("config.batch_size"), Some("500"));
    assert_eq!(m.get("config.epsilon"), Some("0.5"));
    assert_eq!(m.get("config.task"), Some("retrieval"));
    assert!(m.get("seed").is_some());
    let history = fs::read_to_string(dir.path().join("m/history.csv")).unwrap();
    assert!(history.starts_with("step,train_loss,dev_mrr\n"));
}

#[test]
fn conversation_training_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("cv");
    ok(&[
        "build-dataset",
        "--task",
        "conversation",
        "--synthetic",
        "30",
        "--out-dir",
        p(&ds),
        "--seed",
        "2",
    ]);
    let dm = Manifest::load(ds.join("manifest.txt")).unwrap();
    assert_eq!(dm.get("task"), Some("conversation"));
    for g in load_groups(ds.join("train.tsv"), Task::Conversation).unwrap() {
        assert!(g.positive().is_some());
        assert_eq!(g.candidates.len(), 10);
    }
    let m = train(&ds, &dir.path().join("m"), &[]);
    assert_eq!(m.get("config.batch_size"), Some("200"));
    assert_eq!(m.get("config.epsilon"), Some("0.3"));
    assert_eq!(m.get("config.lr"), Some("0.002"));
}

#[test]
fn cnn_match_has_no_lstm_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    build_quora(&ds, "1");
    let (c, l) = (dir.path().join("c"), dir.path().join("l"));
    train(&ds, &c, &["--variant", "cnn_match"]);
    train(&ds, &l, &[]);
    let names = |dir: &Path| -> Vec<String> {
        let model = MatchModel::load(dir.join("model.ckpt")).unwrap();
        model.params().iter().map(|(_, prm)| prm.name.clone()).collect()
    };
    let cnn = names(&c);
    assert!(!cnn.is_empty());
    assert!(cnn.iter().all(|n| !n.starts_with("lstm")), "{cnn:?}");
    assert!(names(&l).iter().any(|n| n.starts_with("lstm")));
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    build_quora(&ds, "1");
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "lr=0.01\nbatch_size=7\nepsilon=0.25\n").unwrap();
    let m = train(
        &ds,
        &dir.path().join("m"),
        &["--config", p(&conf), "--batch-size", "9"],
    );
    assert_eq!(m.get("config.batch_size"), Some("9"));
    assert_eq!(m.get("config.lr"), Some("0.01"));
    assert_eq!(m.get("config.epsilon"), Some("0.25"));
    assert_eq!(m.get("config.lambda"), Some("0.0001"));
}

/// Straight-line BM25 over the dataset files, stopwords removed.
fn bm25_oracle(ds: &Path) -> (f64, f64, f64, f64) {
    let stop = Stoplist::english();
    let clean = |s: &str| -> Vec<String> {
        s.split_whitespace()
            .filter(|t| !stop.contains(t))
            .map(str::to_owned)
            .collect()
    };
    let docs: Vec<Vec<String>> = fs::read_to_string(ds.join("questions.tsv"))
        .unwrap()
        .lines()
        .map(|l| clean(l.split_once('\t').unwrap().1))
        .collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut df: HashMap<&str, f64> = HashMap::new();
    for d in &docs {
        for t in d.iter().collect::<HashSet<_>>() {
            *df.entry(t.as_str()).or_default() += 1.0;
        }
    }
    let (k1, b) = (1.2, 0.75);

    type Group = (String, Vec<(u64, bool, String)>);
    let mut groups: BTreeMap<u64, Group> = BTreeMap::new();
    for line in fs::read_to_string(ds.join("test.tsv")).unwrap().lines() {
        let f: Vec<&str> = line.split('\t').collect();
        let e = groups
            .entry(f[0].parse().unwrap())
            .or_insert_with(|| (f[3].to_string(), Vec::new()));
        e.1.push((f[2].parse().unwrap(), f[1] == "1", f[4].to_string()));
    }
    let (mut mrr, mut p1, mut p5, mut r5) = (0.0, 0.0, 0.0, 0.0);
    for (q, cands) in groups.values() {
        let q: Vec<String> = clean(q).into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let mut scored: Vec<(f64, u64, bool)> = cands
            .iter()
            .map(|(id, label, text)| {
                let d = clean(text);
                let len = d.len() as f64;
                let s: f64 = q
                    .iter()
                    .map(|t| {
                        let tf = d.iter().filter(|w| *w == t).count() as f64;
                        let dft = df.get(t.as_str()).copied().unwrap_or(0.0);
                        let idf = ((n - dft + 0.5) / (dft + 0.5) + 1.0).ln();
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl))
                    })
                    .sum();
                (s, *id, *label)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let rank = scored.iter().position(|x| x.2).unwrap() + 1;
        mrr += 1.0 / rank as f64;
        p1 += f64::from(rank == 1);
        p5 += f64::from(rank <= 5) / 5.0;
        r5 += f64::from(rank <= 5);
    }
    let k = groups.len() as f64;
    (mrr / k, p1 / k, p5 / k, r5 / k)
}

#[test]
fn eval_bm25_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    build_quora(&ds, "4");
    let ev = dir.path().join("ev");
    let out = ok(&["eval", "--data", p(&ds), "--methods", "bm25", "--out", p(&ev)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("bm25"));

    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "bm25");
    let got: Vec<f64> = row[1..5].iter().map(|x| x.parse().unwrap()).collect();
    let (mrr, p1, p5, r5) = bm25_oracle(&ds);
    for (g, w) in got.iter().zip([mrr, p1, p5, r5]) {
        assert!((g - w).abs() <= 5e-7, "{got:?} vs {:?}", (mrr, p1, p5, r5));
    }
    let per_query = fs::read_to_string(ev.join("per_query/bm25.csv")).unwrap();
    assert_eq!(per_query.lines().count(), 1 + row[5].parse::<usize>().unwrap());
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let err: f64 = text
        .split("max relative error ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("unexpected output: {text}"));
    assert!(err < 1e-4);
}

#[test]
fn eval_of_empty_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    fs::create_dir_all(&ds).unwrap();
    fs::write(ds.join("manifest.txt"), "task=retrieval\n").unwrap();
    fs::write(ds.join("test.tsv"), "").unwrap();
    fs::write(ds.join("questions.tsv"), "1\thow do i learn rust\n").unwrap();
    let out = run(&["eval", "--data", p(&ds), "--methods", "bm25"]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn rank_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    build_quora(&ds, "1");
    let out = ok(&["rank", "--data", p(&ds), "--query", "How do I learn rust quickly?", "--k", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0][0], "1");
    assert_eq!(lines[0][3], "how do i learn rust quickly");
    let scores: Vec<f64> = lines.iter().map(|l| l[2].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let ev = dir.path().join("ev");
    ok(&["eval", "--data", p(&ds), "--methods", "bm25,wordcount", "--out", p(&ev)]);
    let a = format!("bm25={}", p(&ev.join("per_query/bm25.csv")));
    let b = format!("wc={}", p(&ev.join("per_query/wordcount.csv")));
    let out = ok(&["compare", &a, &b, "--reference", "bm25"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("Method"));
    assert!(text.contains("p(MRR)"));
    assert!(!run(&["compare", &a, "--reference", "missing"]).status.success());
}
