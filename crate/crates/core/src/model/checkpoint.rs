//! Checkpoint container: a `key=value` text header terminated by `end`,
//! then named parameter blocks (`name`, rank, dims, row-major f64 values),
//! all little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{MatchModel, ModelConfig};
use crate::nn::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "qmatch-checkpoint v1";
const END: &str = "end";

fn header(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    let widths: Vec<String> = cfg.filter_widths.iter().map(usize::to_string).collect();
    vec![
        ("variant", cfg.variant.to_string()),
        ("vocab_size", cfg.vocab_size.to_string()),
        ("embed_dim", cfg.embed_dim.to_string()),
        ("hidden", cfg.hidden.to_string()),
        ("filter_widths", widths.join(",")),
        ("n_filters", cfg.n_filters.to_string()),
        ("join_hidden", cfg.join_hidden.to_string()),
        ("max_query_len", cfg.max_query_len.to_string()),
        ("max_cand_len", cfg.max_cand_len.to_string()),
        ("freeze_embeddings", cfg.freeze_embeddings.to_string()),
        ("dropout", format!("{:?}", cfg.dropout)),
    ]
}

fn field<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("bad checkpoint value {key}={raw}")))
}

fn parse_config(map: &HashMap<String, String>) -> Result<ModelConfig> {
    let widths: String = field(map, "filter_widths")?;
    let filter_widths = widths
        .split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad filter width `{w}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let variant: String = field(map, "variant")?;
    Ok(ModelConfig {
        variant: variant.parse()?,
        vocab_size: field(map, "vocab_size")?,
        embed_dim: field(map, "embed_dim")?,
        hidden: field(map, "hidden")?,
        filter_widths,
        n_filters: field(map, "n_filters")?,
        join_hidden: field(map, "join_hidden")?,
        max_query_len: field(map, "max_query_len")?,
        max_cand_len: field(map, "max_cand_len")?,
        freeze_embeddings: field(map, "freeze_embeddings")?,
        dropout: field(map, "dropout")?,
    })
}

impl MatchModel {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in header(&self.config) {
            writeln!(w, "{k}={v}")?;
        }
        writeln!(w, "{END}")?;
        w.write_u32::<LittleEndian>(self.params.len() as u32)?;
        for (_, p) in self.params.iter() {
            w.write_u32::<LittleEndian>(p.name.len() as u32)?;
            w.write_all(p.name.as_bytes())?;
            w.write_u32::<LittleEndian>(p.value.shape().len() as u32)?;
            for &d in p.value.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &x in p.value.data() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        w.flush()
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Format("not a qmatch checkpoint".into()));
        }
        let mut map = HashMap::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("checkpoint header is not terminated".into()));
            }
            let l = line.trim_end();
            if l == END {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{l}`")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let config = parse_config(&map)?;
        let mut model = MatchModel::new(config, 0)?;

        let n = r.read_u32::<LittleEndian>()? as usize;
        if n != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {n} parameters, config implies {}",
                model.params.len()
            )));
        }
        for _ in 0..n {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let shape = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter `{name}`")))?;
            let target = model.params.get_mut(id);
            if target.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: target.shape().to_vec(),
                    right: shape,
                });
            }
            let trainable = target.requires_grad();
            let mut data = vec![0.0; target.len()];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            *target = Tensor::new(shape, data)?.with_requires_grad(trainable);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }
}
