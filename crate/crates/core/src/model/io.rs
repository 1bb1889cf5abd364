use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{CostParams, ModelError, ModelParams, SojournSampleSet};
use crate::kv::{parse_k, KvError, KvMap};
use crate::qlang::SearchCondition;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("samples: {0}")]
    Csv(#[from] csv::Error),
    #[error("samples line {line}: {message}")]
    Record { line: u64, message: String },
}

fn k_table(kv: &KvMap, prefix: &str) -> Result<BTreeMap<u32, f64>, KvError> {
    kv.with_prefix(prefix)
        .map(|(suffix, v)| {
            let key = format!("{prefix}.{suffix}");
            let k = parse_k(suffix).ok_or_else(|| KvError::Unknown(key.clone()))?;
            let v = v.parse().map_err(|_| KvError::BadValue {
                key,
                value: v.to_string(),
            })?;
            Ok((k, v))
        })
        .collect()
}

const SCALARS: [&str; 10] = [
    "nm",
    "ncm",
    "ns",
    "nh",
    "alpha",
    "t_parent_proc_ms",
    "t_child_proc_ms",
    "t_comparison_us",
    "t_base_us",
    "t_per_context_switch_us",
];
const TABLES: [&str; 7] = [
    "t_master_rpc_ms",
    "ncs_base",
    "ncs_per_slave",
    "st_network_ms",
    "w_master",
    "w_network",
    "qmr",
];

impl ModelParams {
    /// Reads the flat key=value form. Microsecond keys are converted to
    /// milliseconds.
    pub fn from_kv(kv: &KvMap) -> Result<ModelParams, ParamsError> {
        for key in kv.keys() {
            let head = key.split('.').next().unwrap_or(key);
            let known = if key.contains('.') {
                TABLES.contains(&head)
            } else {
                SCALARS.contains(&key)
            };
            if !known {
                return Err(KvError::Unknown(key.to_string()).into());
            }
        }
        let mut qmr = BTreeMap::new();
        for (suffix, v) in kv.with_prefix("qmr") {
            let key = format!("qmr.{suffix}");
            let (sct, k) = suffix
                .split_once('.')
                .and_then(|(s, k)| Some((SearchCondition::from_name(s)?, parse_k(k)?)))
                .ok_or_else(|| KvError::Unknown(key.clone()))?;
            let v: f64 = v.parse().map_err(|_| KvError::BadValue {
                key,
                value: v.to_string(),
            })?;
            qmr.insert((sct, k), v);
        }
        let us = |key: &str| -> Result<f64, KvError> { Ok(kv.require::<f64>(key)? / 1000.0) };
        let p = ModelParams {
            nm: kv.require("nm")?,
            ncm: kv.require("ncm")?,
            ns: kv.require("ns")?,
            nh: kv.require("nh")?,
            alpha: kv.get("alpha")?.unwrap_or(0.25),
            qmr,
            w_master: k_table(kv, "w_master")?,
            w_network: k_table(kv, "w_network")?,
            cost: CostParams {
                t_parent_proc: kv.require("t_parent_proc_ms")?,
                t_child_proc: kv.require("t_child_proc_ms")?,
                t_master_rpc: k_table(kv, "t_master_rpc_ms")?,
                t_comparison: us("t_comparison_us")?,
                t_base: us("t_base_us")?,
                t_per_context_switch: us("t_per_context_switch_us")?,
                ncs_base: k_table(kv, "ncs_base")?,
                ncs_per_slave: k_table(kv, "ncs_per_slave")?,
                st_network: k_table(kv, "st_network_ms")?,
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("nm", self.nm);
        kv.insert("ncm", self.ncm);
        kv.insert("ns", self.ns);
        kv.insert("nh", self.nh);
        kv.insert("alpha", self.alpha);
        let c = &self.cost;
        kv.insert("t_parent_proc_ms", c.t_parent_proc);
        kv.insert("t_child_proc_ms", c.t_child_proc);
        kv.insert("t_comparison_us", c.t_comparison * 1000.0);
        kv.insert("t_base_us", c.t_base * 1000.0);
        kv.insert("t_per_context_switch_us", c.t_per_context_switch * 1000.0);
        for (name, t) in [
            ("t_master_rpc_ms", &c.t_master_rpc),
            ("ncs_base", &c.ncs_base),
            ("ncs_per_slave", &c.ncs_per_slave),
            ("st_network_ms", &c.st_network),
            ("w_master", &self.w_master),
            ("w_network", &self.w_network),
        ] {
            for (k, v) in t {
                kv.insert(format!("{name}.k{k}"), v);
            }
        }
        for ((sct, k), v) in &self.qmr {
            kv.insert(format!("qmr.{}.k{k}", sct.name()), v);
        }
        kv
    }

    pub fn load(path: &Path) -> Result<ModelParams, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ModelParams::from_kv(&KvMap::parse(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        std::fs::write(path, self.to_kv().to_text()).map_err(|source| ParamsError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// One line of a sample file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub query_id: u64,
    pub repetition: u32,
    pub slave_id: u32,
    pub sojourn_ms: f64,
}

const HEADER: [&str; 4] = ["queryId", "repetition", "slaveId", "sojourn_ms"];

/// Flattens a sample set; query ids are positions in the set.
pub fn samples_to_records(s: &SojournSampleSet) -> Vec<SampleRecord> {
    let mut out = Vec::new();
    for (q, times) in s.per_query().iter().enumerate() {
        for (i, &t) in times.iter().enumerate() {
            out.push(SampleRecord {
                query_id: q as u64,
                repetition: (i / s.np()) as u32,
                slave_id: (i % s.np()) as u32,
                sojourn_ms: t,
            });
        }
    }
    out
}

/// Groups records by query id (ascending) and orders each query's times by
/// (repetition, slave). Every query must cover the same full grid.
pub fn samples_from_records(records: &[SampleRecord]) -> Result<SojournSampleSet, ModelError> {
    let slaves: BTreeSet<u32> = records.iter().map(|r| r.slave_id).collect();
    let reps: BTreeSet<u32> = records.iter().map(|r| r.repetition).collect();
    let (np, r) = (slaves.len(), reps.len());
    if slaves.iter().copied().ne(0..np as u32) || reps.iter().copied().ne(0..r as u32) {
        return Err(ModelError::Samples(
            "slave ids and repetitions must be dense from 0".into(),
        ));
    }
    let mut by_query: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    for rec in records {
        let slot = &mut by_query
            .entry(rec.query_id)
            .or_insert_with(|| vec![None; np * r])
            [rec.repetition as usize * np + rec.slave_id as usize];
        if slot.replace(rec.sojourn_ms).is_some() {
            return Err(ModelError::Samples(format!(
                "query {} repetition {} slave {} appears twice",
                rec.query_id, rec.repetition, rec.slave_id
            )));
        }
    }
    let per_query = by_query
        .into_iter()
        .map(|(q, v)| {
            v.into_iter().collect::<Option<Vec<f64>>>().ok_or_else(|| {
                ModelError::Samples(format!("query {q} is missing repetitions or slaves"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    SojournSampleSet::new(np.max(1), r.max(1), per_query)
}

pub fn samples_to_csv<W: Write>(w: W, records: &[SampleRecord]) -> Result<(), ParamsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in records {
        out.write_record([
            r.query_id.to_string(),
            r.repetition.to_string(),
            r.slave_id.to_string(),
            r.sojourn_ms.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn samples_from_csv<R: Read>(r: R) -> Result<Vec<SampleRecord>, ParamsError> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().map(str::trim).ne(HEADER) {
        return Err(ParamsError::Record {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let bad = |what: &str| ParamsError::Record {
            line,
            message: format!("bad {what}"),
        };
        out.push(SampleRecord {
            query_id: field(0).parse().map_err(|_| bad("queryId"))?,
            repetition: field(1).parse().map_err(|_| bad("repetition"))?,
            slave_id: field(2).parse().map_err(|_| bad("slaveId"))?,
            sojourn_ms: field(3).parse().map_err(|_| bad("sojourn_ms"))?,
        });
    }
    Ok(out)
}

pub fn write_samples(path: &Path, s: &SojournSampleSet) -> Result<(), ParamsError> {
    let f = std::fs::File::create(path).map_err(|source| ParamsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    samples_to_csv(std::io::BufWriter::new(f), &samples_to_records(s))
}

pub fn read_samples(path: &Path) -> Result<SojournSampleSet, ParamsError> {
    let f = std::fs::File::open(path).map_err(|source| ParamsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(samples_from_records(&samples_from_csv(
        std::io::BufReader::new(f),
    )?)?)
}
