use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use qmatch::classical::{
    topk_retrieve, train_translation_table, Bm25, InvertedIndex, PairScorer, QueryLikelihood, RankedList, Stopped, Trlm, Vsm,
    WordCount, WordCountIdf, DEFAULT_QL_MU,
};
use qmatch::data::{Manifest, QueryGroup};
use qmatch::embed::{load_embeddings, AvgEmbed};
use qmatch::eval::{
    evaluate, feature_groups, read_per_query, render_table, train_combiner, write_metrics_csv, write_per_query,
    CombinerConfig, MetricsReport,
};
use qmatch::text::{remove_stopwords, tokenize, SourceRole, Stoplist, TokenizeConfig};
use qmatch::train::NeuralScorer;

use crate::dataset::DataDir;
use crate::settings::{List, Settings};
use crate::train_cmd::ModelDir;
use crate::{CompareArgs, EvalArgs, RankArgs};

pub const METHODS: &[&str] = &[
    "bm25",
    "ql",
    "trlm",
    "vsm",
    "wordcount",
    "wordcount-idf",
    "avg-embed",
    "neural",
    "combined",
];

fn stopped<S: PairScorer + 'static>(inner: S, stoplist: &Arc<Stoplist>) -> Box<dyn PairScorer> {
    Box::new(Stopped {
        inner,
        stoplist: stoplist.clone(),
    })
}

struct Resources<'a> {
    data: &'a DataDir,
    index: Arc<InvertedIndex>,
    stoplist: Arc<Stoplist>,
    model: Option<&'a Path>,
    embeddings: Option<(&'a Path, usize)>,
    trlm_iters: usize,
    trlm_beta: f64,
}

impl Resources<'_> {
    fn scorer(&self, method: &str) -> Result<Box<dyn PairScorer>> {
        let index = self.index.clone();
        let sl = &self.stoplist;
        Ok(match method {
            "bm25" => stopped(Bm25::with_defaults(index)?, sl),
            "ql" => stopped(QueryLikelihood::new(index, DEFAULT_QL_MU)?, sl),
            "trlm" => {
                // Candidate words translate into query words.
                let pairs: Vec<_> = self
                    .data
                    .groups("train")?
                    .iter()
                    .filter_map(|g| {
                        g.positive().map(|p| {
                            (remove_stopwords(&p.tokens, sl), remove_stopwords(&g.query, sl))
                        })
                    })
                    .collect();
                let table = train_translation_table(&pairs, self.trlm_iters)?.table;
                stopped(Trlm::new(index, Arc::new(table), self.trlm_beta, DEFAULT_QL_MU)?, sl)
            }
            "vsm" => stopped(Vsm { index }, sl),
            "wordcount" => stopped(WordCount, sl),
            "wordcount-idf" => stopped(WordCountIdf { index }, sl),
            "avg-embed" => {
                let (path, dim) = self.embeddings.context("avg-embed needs --embeddings")?;
                Box::new(AvgEmbed {
                    store: Arc::new(load_embeddings(path, dim, 0)?),
                })
            }
            "neural" => {
                let dir = ModelDir::open(self.model.context("neural needs --model")?)?;
                let featurizer = dir.featurizer(self.data, self.stoplist.clone())?;
                Box::new(NeuralScorer {
                    model: Arc::new(dir.model),
                    featurizer,
                })
            }
            other => bail!("unknown method `{other}` (known: {})", METHODS.join(", ")),
        })
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let data = DataDir::open(&args.data)?;
    let mut s = Settings::new(args.config.as_deref())?;
    let split = s.get("split", args.split.clone(), "test".to_string())?;
    let methods = s.get("methods", args.methods.clone(), List(vec!["bm25".to_string()]))?.0;
    let trlm_iters = s.get("trlm_iters", args.trlm_iters, 5)?;
    let trlm_beta = s.get("trlm_beta", args.trlm_beta, 0.5)?;
    let embed_dim = s.get("embed_dim", args.embed_dim, 300)?;
    let model = s.get_opt::<String>("model", args.model.as_ref().map(|p| p.display().to_string()))?;
    let embeddings = s.get_opt::<String>("embeddings", args.embeddings.as_ref().map(|p| p.display().to_string()))?;
    anyhow::ensure!(!methods.is_empty(), "no methods given");

    let groups = data.groups(&split)?;
    if groups.is_empty() {
        bail!("split `{split}` of {} has no query groups", args.data.display());
    }
    let stoplist = Arc::new(Stoplist::english());
    let res = Resources {
        data: &data,
        index: Arc::new(data.index(&stoplist)?),
        stoplist,
        model: model.as_deref().map(Path::new),
        embeddings: embeddings.as_deref().map(|p| (Path::new(p), embed_dim)),
        trlm_iters,
        trlm_beta,
    };

    let base: Vec<&String> = methods.iter().filter(|m| *m != "combined").collect();
    let scorers: Vec<Box<dyn PairScorer>> = base.iter().map(|m| res.scorer(m)).collect::<Result<_>>()?;
    let mut reports: HashMap<&str, MetricsReport> = HashMap::new();
    for (m, sc) in base.iter().zip(&scorers) {
        log::info!("evaluating {m} on {} groups", groups.len());
        reports.insert(m.as_str(), evaluate(sc.as_ref(), &groups)?);
    }
    if methods.iter().any(|m| m == "combined") {
        anyhow::ensure!(!scorers.is_empty(), "combined needs at least one other method");
        reports.insert("combined", combined(&data, &groups, &base, &scorers)?);
    }

    let rows: Vec<(String, MetricsReport)> = methods
        .iter()
        .map(|m| (m.clone(), reports[m.as_str()].clone()))
        .collect();
    let reference = match s.get_opt::<String>("reference", args.reference.clone())? {
        Some(r) => Some(
            methods
                .iter()
                .position(|m| *m == r)
                .with_context(|| format!("reference `{r}` is not among the methods"))?,
        ),
        None => Some(0),
    };

    if let Some(out) = &args.out {
        fs::create_dir_all(out.join("per_query")).with_context(|| format!("creating {}", out.display()))?;
        write_metrics_csv(BufWriter::new(File::create(out.join("metrics.csv"))?), &rows)?;
        for (m, r) in &rows {
            write_per_query(BufWriter::new(File::create(out.join("per_query").join(format!("{m}.csv")))?), r)?;
        }
        let mut manifest: Manifest = s.resolved;
        manifest.set("config_hash", manifest.config_hash());
        manifest.set("data", args.data.display());
        manifest.set("queries", groups.len());
        manifest.save(out.join("manifest.txt"))?;
    }
    print!("{}", render_table(&rows, reference));
    Ok(())
}

/// Linear fusion of the other methods, fit on the dev split.
fn combined(
    data: &DataDir,
    groups: &[QueryGroup],
    names: &[&String],
    scorers: &[Box<dyn PairScorer>],
) -> Result<MetricsReport> {
    let refs: Vec<&dyn PairScorer> = scorers.iter().map(|s| s.as_ref()).collect();
    let dev = data.groups("dev")?;
    anyhow::ensure!(!dev.is_empty(), "combined needs a non-empty dev split");
    let fit = feature_groups(&dev, &refs)?;
    let c = train_combiner(&fit, names.iter().map(|n| n.to_string()).collect(), &CombinerConfig::default())?;
    log::info!("combiner weights {:?}", c.weights);
    Ok(c.evaluate(&feature_groups(groups, &refs)?)?)
}

pub fn rank(args: &RankArgs) -> Result<()> {
    let data = DataDir::open(&args.data)?;
    let stoplist = Arc::new(Stoplist::english());
    let index = Arc::new(data.index(&stoplist)?);
    let texts: HashMap<_, _> = data.questions()?.into_iter().collect();
    let query = tokenize(&args.query, TokenizeConfig::default()).with_role(SourceRole::QueryQuestion);
    let probe = remove_stopwords(&query, &stoplist);
    anyhow::ensure!(!probe.is_empty(), "query has no content words");

    let bm25 = Bm25::with_defaults(index.clone())?;
    let hits = topk_retrieve(&index, &probe, args.depth, &bm25)?;
    let scored: Vec<(u64, f64)> = match args.method.as_str() {
        "bm25" => hits.entries.iter().map(|e| (e.doc_id, e.score)).collect(),
        "neural" => {
            let dir = ModelDir::open(args.model.as_deref().context("neural ranking needs --model")?)?;
            let scorer = NeuralScorer {
                featurizer: dir.featurizer(&data, stoplist)?,
                model: Arc::new(dir.model),
            };
            let ids: Vec<u64> = hits.doc_ids().collect();
            let cands: Vec<_> = ids.iter().map(|d| &texts[d]).collect();
            ids.iter().copied().zip(scorer.score_all(&query, &cands)?).collect()
        }
        other => bail!("rank supports bm25 and neural, not `{other}`"),
    };
    let ranked = RankedList::from_scores(0, scored);
    for (i, e) in ranked.entries.iter().take(args.k).enumerate() {
        println!("{}\t{}\t{:.6}\t{}", i + 1, e.doc_id, e.score, texts[&e.doc_id]);
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    anyhow::ensure!(!args.runs.is_empty(), "nothing to compare");
    let rows: Vec<(String, MetricsReport)> = args
        .runs
        .iter()
        .map(|run| {
            let (name, path) = match run.split_once('=') {
                Some((n, p)) => (n.to_string(), Path::new(p)),
                None => {
                    let p = Path::new(run.as_str());
                    (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p)
                }
            };
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Ok((name, read_per_query(BufReader::new(f), &path.display().to_string())?))
        })
        .collect::<Result<_>>()?;
    let reference = match &args.reference {
        Some(r) => rows
            .iter()
            .position(|(n, _)| n == r)
            .with_context(|| format!("reference `{r}` is not among the runs"))?,
        None => 0,
    };
    print!("{}", render_table(&rows, Some(reference)));
    Ok(())
}
