//! Cross-modality retrieval evaluation: L2 normalization, Euclidean ranking,
//! CMC, mAP and mINP.
//!
//! For a query with `G` correct gallery matches at 1-based ranks
//! `r_1 < ... < r_G`:
//!
//! * `AP  = (1/G) * sum_k k / r_k`
//! * `INP = G / r_G` (the hardest correct match sets the penalty)
//! * `CMC(r)` counts queries whose first correct match is within the top `r`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f32>>, labels: Vec<usize>, modalities: Vec<Modality>) -> Result<Self> {
        let set = Self {
            vectors,
            labels,
            modalities,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.vectors.len();
        if self.labels.len() != m || self.modalities.len() != m {
            return Err(Error::invalid("embedding set fields have different lengths"));
        }
        if let Some(first) = self.vectors.first() {
            let dim = first.len();
            for (i, v) in self.vectors.iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::invalid(format!("vector {i} has dimension {}, expected {dim}", v.len())));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::invalid(format!("vector {i} is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Rows whose modality is `m`.
    pub fn filter_modality(&self, m: Modality) -> EmbeddingSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.modalities[i] == m).collect();
        EmbeddingSet {
            vectors: keep.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            modalities: keep.iter().map(|&i| self.modalities[i]).collect(),
        }
    }

    /// Binary export: magic `EMBD`, version, `M`, `dim` (all `u32`), then per
    /// row `label u32`, `modality u8` (0 visible, 1 thermal), `dim` x `f32`.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_u32::<LittleEndian>(EMBEDDING_VERSION)?;
        w.write_u32::<LittleEndian>(self.len() as u32)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        for ((v, &l), &m) in self.vectors.iter().zip(&self.labels).zip(&self.modalities) {
            w.write_u32::<LittleEndian>(l as u32)?;
            w.write_u8(m.tag())?;
            for &x in v {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> std::result::Result<Self, String> {
        let io = |e: std::io::Error| e.to_string();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != EMBEDDING_MAGIC {
            return Err("not an embedding file (bad magic)".into());
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != EMBEDDING_VERSION {
            return Err(format!("unsupported embedding file version {version}"));
        }
        let m = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut set = EmbeddingSet::default();
        for row in 0..m {
            set.labels.push(r.read_u32::<LittleEndian>().map_err(io)? as usize);
            let tag = r.read_u8().map_err(io)?;
            set.modalities
                .push(Modality::from_tag(tag).ok_or_else(|| format!("row {row}: bad modality tag {tag}"))?);
            let mut v = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut v).map_err(io)?;
            set.vectors.push(v);
        }
        set.validate().map_err(|e| e.to_string())?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_binary(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(&mut BufReader::new(f)).map_err(|m| Error::format(path, m))
    }

    /// CSV with header `label,modality,f0,f1,...`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "label,modality")?;
        for j in 0..self.dim() {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for ((v, &l), &m) in self.vectors.iter().zip(&self.labels).zip(&self.modalities) {
            write!(w, "{l},{m}")?;
            for x in v {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> std::result::Result<Self, String> {
        let mut lines = r.lines();
        lines.next().ok_or("empty csv")?.map_err(|e| e.to_string())?;
        let mut set = EmbeddingSet::default();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let mut fields = line.split(',');
            let bad = || format!("row {i}: malformed");
            set.labels
                .push(fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
            set.modalities
                .push(fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
            set.vectors.push(
                fields
                    .map(|f| f.parse::<f32>().map_err(|_| bad()))
                    .collect::<std::result::Result<_, _>>()?,
            );
        }
        set.validate().map_err(|e| e.to_string())?;
        Ok(set)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMBD";
pub const EMBEDDING_VERSION: u32 = 1;

/// Scales every vector to unit Euclidean norm.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut out = set.clone();
    for (i, v) in out.vectors.iter_mut().enumerate() {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("vector {i} has zero norm")));
        }
        v.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
    }
    Ok(out)
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Gallery indices per query, by ascending distance, ties by gallery index.
pub fn rank_gallery(query: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<Vec<Vec<usize>>> {
    if gallery.is_empty() {
        return Err(Error::invalid("empty gallery"));
    }
    if !query.is_empty() && query.dim() != gallery.dim() {
        return Err(Error::invalid(format!(
            "query dimension {} != gallery dimension {}",
            query.dim(),
            gallery.dim()
        )));
    }
    Ok(query
        .vectors
        .iter()
        .map(|q| {
            let dist: Vec<f64> = gallery.vectors.iter().map(|g| euclidean(q, g)).collect();
            let mut order: Vec<usize> = (0..gallery.len()).collect();
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            order
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `cmc[r - 1]` is the rank-`r` accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub num_queries: usize,
    #[serde(default)]
    pub config_echo: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn rank(&self, r: usize) -> f64 {
        if r == 0 || self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(r - 1).min(self.cmc.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }
}

/// Per-query retrieval outcome for one ranking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryMetrics {
    pub first_hit: usize,
    pub ap: f64,
    pub inp: f64,
}

/// Metrics of one query given the labels of its ranked gallery.
pub fn query_metrics(query_label: usize, ranked_labels: impl IntoIterator<Item = usize>) -> Option<QueryMetrics> {
    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut first = None;
    let mut last = 0;
    for (pos, l) in ranked_labels.into_iter().enumerate() {
        if l == query_label {
            hits += 1;
            let rank = pos + 1;
            ap += hits as f64 / rank as f64;
            first.get_or_insert(rank);
            last = rank;
        }
    }
    let first_hit = first?;
    Some(QueryMetrics {
        first_hit,
        ap: ap / hits as f64,
        inp: hits as f64 / last as f64,
    })
}

pub fn compute_metrics(query: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<EvalReport> {
    if query.is_empty() {
        return Err(Error::invalid("no queries"));
    }
    let ranking = rank_gallery(query, gallery)?;
    let mut hist = vec![0usize; gallery.len()];
    let (mut ap_sum, mut inp_sum) = (0.0, 0.0);
    let mut missing = Vec::new();
    for (qi, order) in ranking.iter().enumerate() {
        match query_metrics(query.labels[qi], order.iter().map(|&g| gallery.labels[g])) {
            Some(m) => {
                hist[m.first_hit - 1] += 1;
                ap_sum += m.ap;
                inp_sum += m.inp;
            }
            None => missing.push(query.labels[qi]),
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::invalid(format!(
            "queries without a gallery match, labels {missing:?}"
        )));
    }
    let nq = query.len() as f64;
    let mut acc = 0usize;
    let cmc = hist
        .iter()
        .map(|&c| {
            acc += c;
            acc as f64 / nq
        })
        .collect();
    Ok(EvalReport {
        cmc,
        map: ap_sum / nq,
        minp: inp_sum / nq,
        num_queries: query.len(),
        config_echo: BTreeMap::new(),
    })
}

/// Which modality queries which.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Visible queries against a thermal gallery.
    V2t,
    /// Thermal queries against a visible gallery.
    T2v,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::V2t => "v2t",
            Direction::T2v => "t2v",
        }
    }

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::V2t => Modality::Visible,
            Direction::T2v => Modality::Thermal,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v2t" => Ok(Direction::V2t),
            "t2v" => Ok(Direction::T2v),
            other => Err(Error::config(format!("unknown direction `{other}`"))),
        }
    }
}

/// Normalizes `set`, splits it by modality and evaluates `direction`.
pub fn evaluate_cross_modality(set: &EmbeddingSet, direction: Direction) -> Result<EvalReport> {
    let normed = l2_normalize(set)?;
    let q = direction.query_modality();
    let mut report = compute_metrics(&normed.filter_modality(q), &normed.filter_modality(q.other()))?;
    report
        .config_echo
        .insert("direction".into(), direction.as_str().into());
    Ok(report)
}
