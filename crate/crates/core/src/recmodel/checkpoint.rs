//! Plain-text checkpoint format.
//!
//! ```text
//! dccl-checkpoint 1
//! meta <key> <value>            (zero or more)
//! tensors <count>
//! tensor <name> <rank> <d0> .. <d{rank-1}>
//! <values, whitespace separated, one line per row of the last axis>
//! ...
//! end
//! ```
//!
//! Tensors appear in name order. Values are written in Rust's shortest
//! round-trip exponent form, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

use super::{BackboneConfig, BackboneParams};

const MAGIC: &str = "dccl-checkpoint 1";

pub type Meta = BTreeMap<String, String>;

pub fn encode_checkpoint(meta: &Meta, params: &ParamSet) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (k, v) in meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    let _ = writeln!(out, "tensors {}", params.len());
    for (name, t) in params.iter() {
        let _ = write!(out, "tensor {name} {}", t.shape().len());
        for d in t.shape() {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        let row = t.shape().last().copied().unwrap_or(1).max(1);
        for chunk in t.data().chunks(row) {
            let mut first = true;
            for v in chunk {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:e}");
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn decode_checkpoint(text: &str, path: &Path) -> Result<(Meta, ParamSet)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(err(1, format!("expected `{MAGIC}`"))),
    }
    let mut meta = Meta::new();
    let count = loop {
        let (n, line) = lines.next().ok_or_else(|| err(0, "unexpected end of file".into()))?;
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("tensors ") {
            break rest.trim().parse::<usize>().map_err(|e| err(n, e.to_string()))?;
        } else {
            return Err(err(n, format!("unexpected line `{line}`")));
        }
    };
    let mut params = ParamSet::new();
    for _ in 0..count {
        let (n, header) = lines.next().ok_or_else(|| err(0, "missing tensor header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 3 || fields[0] != "tensor" {
            return Err(err(n, format!("bad tensor header `{header}`")));
        }
        let name = fields[1].to_string();
        let rank: usize = fields[2].parse().map_err(|e| err(n, format!("rank: {e}")))?;
        if fields.len() != 3 + rank {
            return Err(err(n, format!("expected {rank} extents")));
        }
        let shape = fields[3..]
            .iter()
            .map(|f| f.parse::<usize>().map_err(|e| err(n, format!("extent: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total);
        while data.len() < total {
            let (n, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("tensor {name}: values truncated")))?;
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| err(n, format!("value `{tok}`: {e}")))?);
            }
        }
        if data.len() != total {
            return Err(err(n, format!("tensor {name}: {} values, expected {total}", data.len())));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    match lines.next() {
        Some((_, "end")) => Ok((meta, params)),
        Some((n, l)) => Err(err(n, format!("expected `end`, got `{l}`"))),
        None => Err(err(0, "missing `end`".into())),
    }
}

pub fn save_checkpoint(path: &Path, meta: &Meta, params: &ParamSet) -> Result<()> {
    fs::write(path, encode_checkpoint(meta, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Meta, ParamSet)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&text, path)
}

pub(crate) fn config_meta(c: &BackboneConfig) -> Meta {
    let mut m = Meta::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("n_users", c.n_users.to_string());
    put("n_items", c.n_items.to_string());
    put("n_categories", c.n_categories.to_string());
    put("user_dim", c.user_dim.to_string());
    put("item_dim", c.item_dim.to_string());
    put("category_dim", c.category_dim.to_string());
    put("attention_dim", c.attention_dim.to_string());
    put("tower", format!("{},{}", c.tower[0], c.tower[1]));
    put("classifier_dim", c.classifier_dim.to_string());
    put(
        "bottlenecks",
        format!("{},{},{}", c.bottlenecks[0], c.bottlenecks[1], c.bottlenecks[2]),
    );
    put("max_history", c.max_history.to_string());
    m
}

pub(crate) fn meta_config(m: &Meta) -> Result<BackboneConfig> {
    let get = |k: &str| -> Result<&str> {
        m.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("checkpoint meta missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|e| Error::Data(format!("checkpoint meta `{k}`: {e}")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split(',')
            .map(|s| s.parse().map_err(|e| Error::Data(format!("checkpoint meta `{k}`: {e}"))))
            .collect()
    };
    let tower = list("tower")?;
    let bottlenecks = list("bottlenecks")?;
    if tower.len() != 2 || bottlenecks.len() != 3 {
        return Err(Error::Data("checkpoint tower/bottleneck lists have wrong length".into()));
    }
    Ok(BackboneConfig {
        n_users: num("n_users")?,
        n_items: num("n_items")?,
        n_categories: num("n_categories")?,
        user_dim: num("user_dim")?,
        item_dim: num("item_dim")?,
        category_dim: num("category_dim")?,
        attention_dim: num("attention_dim")?,
        tower: [tower[0], tower[1]],
        classifier_dim: num("classifier_dim")?,
        bottlenecks: [bottlenecks[0], bottlenecks[1], bottlenecks[2]],
        max_history: num("max_history")?,
    })
}

impl BackboneParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = config_meta(&self.config);
        meta.insert("kind".into(), "backbone".into());
        save_checkpoint(path, &meta, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_checkpoint(path)?;
        Self::from_tensors(meta_config(&meta)?, tensors)
    }
}
