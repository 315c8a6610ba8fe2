use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use qmatch::data::{Manifest, Task};
use qmatch::embed::load_embeddings;
use qmatch::model::{MatchModel, ModelConfig, Variant};
use qmatch::text::{build_vocab, Stoplist, Vocab};
use qmatch::train::{make_triples, save_history, train, Featurizer, LossConfig, TrainConfig};

use crate::dataset::DataDir;
use crate::settings::Settings;
use crate::TrainArgs;

pub const CHECKPOINT: &str = "model.ckpt";
pub const VOCAB: &str = "vocab.txt";

/// Model directory written by `train`.
pub struct ModelDir {
    pub model: MatchModel,
    pub vocab: Vocab,
}

impl ModelDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let model = MatchModel::load(dir.join(CHECKPOINT)).with_context(|| format!("loading model from {}", dir.display()))?;
        let vocab = Vocab::load(dir.join(VOCAB))?;
        anyhow::ensure!(
            vocab.len() == model.config().vocab_size,
            "vocabulary in {} does not match the checkpoint",
            dir.display()
        );
        Ok(Self { model, vocab })
    }

    pub fn featurizer(&self, data: &DataDir, stoplist: Arc<Stoplist>) -> Result<Featurizer> {
        let index = data.index(&stoplist)?;
        Ok(Featurizer::new(Arc::new(self.vocab.clone()), stoplist, Arc::new(index)))
    }
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let data = DataDir::open(&args.data)?;
    let mut s = Settings::new(args.config.as_deref())?;
    let task = s.get("task", args.task, data.task)?;
    let (tc, lc) = match task {
        Task::Retrieval => (TrainConfig::retrieval(), LossConfig::retrieval()),
        Task::Conversation => (TrainConfig::conversation(), LossConfig::conversation()),
    };
    let seed = s.get("seed", args.seed, tc.seed)?;
    let tc = TrainConfig {
        lr: s.get("lr", args.lr, tc.lr)?,
        batch_size: s.get("batch_size", args.batch_size, tc.batch_size)?,
        epochs: s.get("epochs", args.epochs, tc.epochs)?,
        seed,
        eval_every: s.get("eval_every", args.eval_every, tc.eval_every)?,
        patience: s.get("patience", args.patience, tc.patience)?,
    };
    let lc = LossConfig {
        epsilon: s.get("epsilon", args.epsilon, lc.epsilon)?,
        lambda: s.get("lambda", args.lambda, lc.lambda)?,
    };
    let variant = s.get("variant", args.variant, Variant::LstmCnnMatch)?;
    let embed_dim = s.get("embed_dim", args.embed_dim, 300)?;
    let min_count = s.get("min_count", args.min_count, 0u64)?;

    let train_g = data.groups("train")?;
    let dev_g = data.groups("dev")?;
    anyhow::ensure!(!train_g.is_empty(), "training split is empty");
    let vocab = build_vocab(
        train_g
            .iter()
            .flat_map(|g| std::iter::once(&g.query).chain(g.candidates.iter().map(|c| &c.tokens))),
        min_count,
    );

    let base = match task {
        Task::Retrieval => ModelConfig::retrieval(vocab.len(), embed_dim),
        Task::Conversation => ModelConfig::conversation(vocab.len(), embed_dim),
    };
    let mc = ModelConfig {
        variant,
        hidden: s.get("hidden", args.hidden, base.hidden)?,
        n_filters: s.get("filters", args.filters, base.n_filters)?,
        join_hidden: s.get("join_hidden", args.join_hidden, base.join_hidden)?,
        max_query_len: s.get("max_query_len", args.max_query_len, base.max_query_len)?,
        max_cand_len: s.get("max_cand_len", args.max_cand_len, base.max_cand_len)?,
        freeze_embeddings: s.flag("freeze_embeddings", args.freeze_embeddings)?,
        ..base
    };
    let embeddings = s.get_opt::<String>("embeddings", args.embeddings.as_ref().map(|p| p.display().to_string()))?;
    let model = match &embeddings {
        Some(path) => {
            let store = load_embeddings(path, embed_dim, seed)?;
            let hits = vocab.tokens().filter(|t| store.contains(t)).count();
            log::info!("{hits} of {} vocabulary words have pretrained vectors", vocab.len());
            MatchModel::with_embeddings(mc, store.matrix_for(&vocab), seed)?
        }
        None => MatchModel::new(mc, seed)?,
    };

    let stoplist = Arc::new(Stoplist::english());
    let featurizer = Featurizer::new(Arc::new(vocab), stoplist.clone(), Arc::new(data.index(&stoplist)?));
    let p_train = featurizer.prepare_all(&train_g);
    let p_dev = featurizer.prepare_all(&dev_g);
    let triples = make_triples(&p_train, seed);
    log::info!(
        "training {variant} on {} triples from {} groups, {} dev groups",
        triples.len(),
        p_train.len(),
        p_dev.len()
    );
    let out = train(model, &triples, &p_dev, &tc, &lc)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    out.model.save(args.out.join(CHECKPOINT))?;
    featurizer.vocab.save(args.out.join(VOCAB))?;
    save_history(args.out.join("history.csv"), &out.history)?;

    let mut m: Manifest = s.resolved;
    m.set("config_hash", m.config_hash());
    m.set("seed", seed);
    m.set("data", args.data.display());
    m.set("data.config_hash", data.manifest.get("config_hash").unwrap_or(""));
    m.set("vocab_size", featurizer.vocab.len());
    m.set("triples", triples.len());
    m.set("steps", out.steps);
    m.set("best_step", out.best_step);
    let fmt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
    m.set("initial_dev_mrr", fmt(out.initial_dev_mrr));
    m.set("best_dev_mrr", fmt(out.best_dev_mrr));
    m.save(args.out.join("manifest.txt"))?;
    if let (Some(best), Some(init)) = (out.best_dev_mrr, out.initial_dev_mrr) {
        log::info!("dev MRR {best:.4} (untrained {init:.4}) at step {} of {}", out.best_step, out.steps);
    }
    Ok(())
}
