//! File formats: ratings tables, model archives, manifests and reports.
//!
//! Model archive layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "ABIASMDL"
//! version    u32      ARCHIVE_VERSION
//! kind       u8       model variant code
//! seed       u64
//! draws      u64      prediction draws per sample
//! K, A, G    u64 x3   levels, aspects, groups
//! hyper      str      hyperparameters as TOML
//! aspects    [str]    aspect names
//! users      [str]    user ids in index order
//! items      [str]    item ids in index order
//! reference  G*A f64  label-alignment reference biases
//! log        [f64]    joint log-density per sweep
//! T          u64      snapshot count, then per snapshot:
//!   sweep u64, z I*A f64, m G*A f64, s J*u32, c (K-1) f64, mu A f64, Sigma A*A f64
//! ```
//!
//! `str` is a u64 byte length followed by UTF-8; `[x]` is a u64 count
//! followed by the elements.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::config::{Hyperparameters, RunConfig};
use crate::data::{validate_dataset, RatingsDataset, RawRating};
use crate::error::{Error, Result};
use crate::evaluation::{DeltaBin, EvaluationReport, GroupSdPoint, IntrinsicDelta};
use crate::gibbs::{ColdStart, PosteriorSamples, Prediction, Snapshot};
use crate::stick_breaking::{category_probabilities, CutPoints};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"ABIASMDL";
pub const ARCHIVE_VERSION: u32 = 1;

fn delimiter_byte(delimiter: char) -> Result<u8> {
    u8::try_from(delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::InvalidConfig(format!("delimiter `{delimiter}` is not ASCII")))
}

/// Reads a ratings table: header `user_id, item_id, <aspect names...>`,
/// one row per user-item pair.
pub fn read_ratings(path: &Path, num_levels: usize, delimiter: char) -> Result<RatingsDataset> {
    let file = File::open(path)?;
    read_ratings_from(BufReader::new(file), num_levels, delimiter)
}

pub fn read_ratings_from<R: Read>(reader: R, num_levels: usize, delimiter: char) -> Result<RatingsDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(delimiter)?)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(Error::Parse(format!(
            "header needs user_id, item_id and at least one aspect column, got {} columns",
            header.len()
        )));
    }
    let aspects: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut raw = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != header.len() {
            return Err(Error::InconsistentAspectCount {
                row,
                expected: aspects.len(),
                found: record.len().saturating_sub(2),
            });
        }
        let ratings = record
            .iter()
            .skip(2)
            .map(|x| {
                x.parse::<i64>()
                    .map_err(|_| Error::Parse(format!("line {line}: rating `{x}` is not an integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        raw.push(RawRating::new(&record[0], &record[1], ratings));
    }
    validate_dataset(&raw, num_levels, Some(aspects))
}

pub fn write_ratings(path: &Path, data: &RatingsDataset, delimiter: char) -> Result<()> {
    let file = File::create(path)?;
    write_ratings_to(BufWriter::new(file), data, delimiter)
}

pub fn write_ratings_to<W: Write>(writer: W, data: &RatingsDataset, delimiter: char) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter_byte(delimiter)?)
        .from_writer(writer);
    let mut header = vec!["user_id".to_string(), "item_id".to_string()];
    header.extend(data.aspect_names().iter().cloned());
    w.write_record(&header)?;
    for row in data.to_raw() {
        let mut rec = vec![row.user, row.item];
        rec.extend(row.ratings.iter().map(i64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `user_id, item_id` pairs; further columns are ignored.
pub fn read_pairs(path: &Path, delimiter: char) -> Result<Vec<(String, String)>> {
    read_pairs_from(BufReader::new(File::open(path)?), delimiter)
}

pub fn read_pairs_from<R: Read>(reader: R, delimiter: char) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(delimiter)?)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse("header needs user_id and item_id columns".into()));
    }
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            match (rec.get(0), rec.get(1)) {
                (Some(u), Some(i)) => Ok((u.to_string(), i.to_string())),
                _ => Err(Error::Parse(format!("line {}: expected user_id and item_id", row + 2))),
            }
        })
        .collect()
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Posterior samples together with the id maps of the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub samples: PosteriorSamples,
    pub aspect_names: Vec<String>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Sign of one bias component against a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasLabel {
    Positive,
    Negative,
    Neutral,
}

impl BiasLabel {
    pub fn of(value: f64, threshold: f64) -> Self {
        if value > threshold {
            Self::Positive
        } else if value < -threshold {
            Self::Negative
        } else {
            Self::Neutral
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
            Self::Neutral => "neutral",
        }
    }
}

impl FittedModel {
    pub fn new(samples: PosteriorSamples, data: &RatingsDataset) -> Self {
        Self {
            samples,
            aspect_names: data.aspect_names().to_vec(),
            user_ids: data.user_ids().to_vec(),
            item_ids: data.item_ids().to_vec(),
        }
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id)
    }

    /// Resolves ids under the cold-start policy.
    pub fn resolve(&self, user: &str, item: &str, cold: ColdStart) -> Result<(Option<usize>, Option<usize>)> {
        let u = self.user_index(user);
        let i = self.item_index(item);
        if cold == ColdStart::Strict {
            if u.is_none() {
                return Err(Error::UnknownUser(user.to_string()));
            }
            if i.is_none() {
                return Err(Error::UnknownItem(item.to_string()));
            }
        }
        Ok((u, i))
    }

    pub fn predict(&self, user: &str, item: &str, cold: ColdStart) -> Result<Prediction> {
        if self.samples.states.is_empty() {
            return Err(Error::EmptySamples);
        }
        let (u, i) = self.resolve(user, item, cold)?;
        Ok(self.samples.predict(u, i))
    }

    /// Posterior mean bias of a user (of the largest group when unknown).
    pub fn user_bias(&self, user: &str, cold: ColdStart) -> Result<DVector<f64>> {
        let u = self.user_index(user);
        if u.is_none() && cold == ColdStart::Strict {
            return Err(Error::UnknownUser(user.to_string()));
        }
        if self.samples.states.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut acc = DVector::zeros(self.aspect_names.len());
        for snap in &self.samples.states {
            acc += self.samples.response_mean(snap, u, None) - &snap.mu;
        }
        Ok(acc / self.samples.states.len() as f64)
    }

    pub fn bias_labels(&self, user: &str, threshold: f64, cold: ColdStart) -> Result<Vec<BiasLabel>> {
        Ok(self
            .user_bias(user, cold)?
            .iter()
            .map(|&b| BiasLabel::of(b, threshold))
            .collect())
    }
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u64::<LE>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn put_strs<W: Write>(w: &mut W, xs: &[String]) -> std::io::Result<()> {
    w.write_u64::<LE>(xs.len() as u64)?;
    xs.iter().try_for_each(|s| put_str(w, s))
}

fn put_f64s<'a, W: Write>(w: &mut W, xs: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
    xs.into_iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

/// Serializes a model archive into a byte vector.
pub fn encode_model(model: &FittedModel) -> Result<Vec<u8>> {
    let s = &model.samples;
    let a = model.aspect_names.len();
    let g = s.reference_m.len();
    let mut w = Vec::new();
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_u32::<LE>(ARCHIVE_VERSION)?;
    w.write_u8(s.kind.code())?;
    w.write_u64::<LE>(s.seed)?;
    w.write_u64::<LE>(s.predict_draws as u64)?;
    for x in [s.num_levels, a, g] {
        w.write_u64::<LE>(x as u64)?;
    }
    put_str(&mut w, &s.hyperparameters.to_toml())?;
    put_strs(&mut w, &model.aspect_names)?;
    put_strs(&mut w, &model.user_ids)?;
    put_strs(&mut w, &model.item_ids)?;
    for m in &s.reference_m {
        put_f64s(&mut w, m.iter())?;
    }
    w.write_u64::<LE>(s.sweep_log.len() as u64)?;
    put_f64s(&mut w, &s.sweep_log)?;
    w.write_u64::<LE>(s.states.len() as u64)?;
    for snap in &s.states {
        if snap.z.len() != model.item_ids.len() || snap.s.len() != model.user_ids.len() || snap.m.len() != g {
            return Err(Error::Archive("snapshot dimensions disagree with id maps".into()));
        }
        w.write_u64::<LE>(snap.sweep)?;
        for z in &snap.z {
            put_f64s(&mut w, z.iter())?;
        }
        for m in &snap.m {
            put_f64s(&mut w, m.iter())?;
        }
        for &sj in &snap.s {
            w.write_u32::<LE>(sj as u32)?;
        }
        put_f64s(&mut w, snap.c.as_slice())?;
        put_f64s(&mut w, snap.mu.iter())?;
        // Row-major for readability with external tools.
        for r in 0..a {
            for c in 0..a {
                w.write_f64::<LE>(snap.sigma[(r, c)])?;
            }
        }
    }
    Ok(w)
}

struct Cursor<'a> {
    inner: &'a [u8],
}

impl Cursor<'_> {
    fn fail<T>(what: &str) -> Result<T> {
        Err(Error::Archive(format!("truncated or corrupt archive while reading {what}")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.inner.read_u8().or_else(|_| Self::fail(what))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.inner.read_u32::<LE>().or_else(|_| Self::fail(what))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.inner.read_u64::<LE>().or_else(|_| Self::fail(what))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)? as usize;
        // Every element takes at least one byte.
        if n > self.inner.len() {
            return Self::fail(what);
        }
        Ok(n)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.inner.read_f64::<LE>().or_else(|_| Self::fail(what))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.len(what)?;
        let (head, tail) = self.inner.split_at(n);
        self.inner = tail;
        String::from_utf8(head.to_vec()).map_err(|_| Error::Archive(format!("{what} is not UTF-8")))
    }

    fn strs(&mut self, what: &str) -> Result<Vec<String>> {
        let n = self.len(what)?;
        (0..n).map(|_| self.str(what)).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<FittedModel> {
    if bytes.len() < 12 || &bytes[..8] != ARCHIVE_MAGIC {
        return Err(Error::Archive("not a model archive".into()));
    }
    let mut cur = Cursor { inner: &bytes[8..] };
    let version = cur.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive version {version} (expected {ARCHIVE_VERSION})"
        )));
    }
    let kind = BaselineKind::from_code(cur.u8("model kind")?)
        .ok_or_else(|| Error::Archive("unknown model kind".into()))?;
    let seed = cur.u64("seed")?;
    let predict_draws = cur.u64("prediction draws")? as usize;
    let k = cur.u64("levels")? as usize;
    let a = cur.u64("aspects")? as usize;
    let g = cur.u64("groups")? as usize;
    if k < 1 || a < 1 {
        return Err(Error::Archive("empty dimensions".into()));
    }
    let hyperparameters = Hyperparameters::from_toml(&cur.str("hyperparameters")?)?;
    let aspect_names = cur.strs("aspect names")?;
    let user_ids = cur.strs("user ids")?;
    let item_ids = cur.strs("item ids")?;
    if aspect_names.len() != a || hyperparameters.num_aspects() != a {
        return Err(Error::Archive("aspect count disagrees with header".into()));
    }
    let reference_m = (0..g)
        .map(|_| cur.f64s(a, "reference biases").map(DVector::from_vec))
        .collect::<Result<Vec<_>>>()?;
    let n_log = cur.len("log length")?;
    let sweep_log = cur.f64s(n_log, "log")?;
    let t = cur.len("snapshot count")?;
    let mut states = Vec::with_capacity(t);
    for _ in 0..t {
        let sweep = cur.u64("sweep")?;
        let z = (0..item_ids.len())
            .map(|_| cur.f64s(a, "intrinsic quality").map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let m = (0..g)
            .map(|_| cur.f64s(a, "group biases").map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let s = (0..user_ids.len())
            .map(|_| {
                let x = cur.u32("groups")? as usize;
                if x >= g {
                    return Err(Error::Archive(format!("group label {x} out of range")));
                }
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        let c = CutPoints::new(cur.f64s(k - 1, "cut-points")?)
            .map_err(|e| Error::Archive(format!("cut-points: {e}")))?;
        let mu = DVector::from_vec(cur.f64s(a, "population mean")?);
        let sigma = DMatrix::from_row_slice(a, a, &cur.f64s(a * a, "population covariance")?);
        states.push(Snapshot {
            sweep,
            z,
            m,
            s,
            c,
            mu,
            sigma,
            v: None,
        });
    }
    if !cur.inner.is_empty() {
        return Err(Error::Archive(format!("{} trailing bytes", cur.inner.len())));
    }
    Ok(FittedModel {
        samples: PosteriorSamples {
            kind,
            hyperparameters,
            num_levels: k,
            seed,
            predict_draws,
            states,
            sweep_log,
            reference_m,
        },
        aspect_names,
        user_ids,
        item_ids,
    })
}

pub fn write_model(path: &Path, model: &FittedModel) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<FittedModel> {
    decode_model(&std::fs::read(path)?)
}

/// Path of the plain-text sidecar next to an archive.
pub fn sidecar_path(archive: &Path) -> PathBuf {
    let mut name = archive.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".toml");
    archive.with_file_name(name)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    model: &'a str,
    run: &'a RunConfig,
    hyperparameters: &'a Hyperparameters,
}

/// Human-readable hyperparameters and run settings of an archive.
pub fn write_sidecar(path: &Path, kind: BaselineKind, hp: &Hyperparameters, cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string(&Sidecar {
        model: kind.name(),
        run: cfg,
        hyperparameters: hp,
    })
    .map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub git_describe: String,
}

/// `git describe --always --dirty` of the working directory, or "unknown".
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn tsv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// `model, metric, aspect, value`; aspect is `all` for pooled metrics.
pub fn write_evaluation_report(path: &Path, reports: &[EvaluationReport], aspects: &[String]) -> Result<()> {
    let mut rows = Vec::new();
    for r in reports {
        for (a, name) in aspects.iter().enumerate() {
            rows.push(vec![r.model.clone(), "rmse".into(), name.clone(), fmt(r.per_aspect_rmse[a])]);
            rows.push(vec![r.model.clone(), "fcp".into(), name.clone(), fmt(r.per_aspect_fcp[a])]);
        }
        rows.push(vec![r.model.clone(), "rmse".into(), "all".into(), fmt(r.rmse)]);
        rows.push(vec![r.model.clone(), "test_loglik".into(), "all".into(), fmt(r.mean_test_loglik)]);
        rows.push(vec![
            r.model.clone(),
            "aspect_ranking_pearson".into(),
            "all".into(),
            fmt(r.aspect_ranking_pearson),
        ]);
        rows.push(vec![r.model.clone(), "num_test".into(), "all".into(), r.num_test.to_string()]);
    }
    tsv(path, &["model", "metric", "aspect", "value"], rows)
}

/// `item_id, aspect, group, group_size, group_sd, control_sd`.
pub fn write_group_sd(path: &Path, points: &[GroupSdPoint], item_ids: &[String], aspects: &[String]) -> Result<()> {
    tsv(
        path,
        &["item_id", "aspect", "group", "group_size", "group_sd", "control_sd"],
        points.iter().map(|p| {
            vec![
                item_ids[p.item].clone(),
                aspects[p.aspect].clone(),
                p.group.to_string(),
                p.group_size.to_string(),
                fmt(p.group_sd),
                fmt(p.control_sd),
            ]
        }),
    )
}

/// `user_id, aspect, item_a, item_b, delta_obs, delta_avg, delta_int`.
pub fn write_intrinsic_deltas(
    path: &Path,
    deltas: &[IntrinsicDelta],
    user_ids: &[String],
    item_ids: &[String],
    aspects: &[String],
) -> Result<()> {
    tsv(
        path,
        &["user_id", "aspect", "item_a", "item_b", "delta_obs", "delta_avg", "delta_int"],
        deltas.iter().map(|d| {
            vec![
                user_ids[d.user].clone(),
                aspects[d.aspect].clone(),
                item_ids[d.first].clone(),
                item_ids[d.second].clone(),
                fmt(d.obs),
                fmt(d.avg),
                fmt(d.int),
            ]
        }),
    )
}

/// `predictor, bin_center, mean_delta_obs, count` for both predictors.
pub fn write_delta_bins(path: &Path, int: &[DeltaBin], avg: &[DeltaBin]) -> Result<()> {
    let rows = int
        .iter()
        .map(|b| ("intrinsic", b))
        .chain(avg.iter().map(|b| ("average", b)))
        .map(|(name, b)| vec![name.to_string(), fmt(b.center), fmt(b.mean_obs), b.count.to_string()]);
    tsv(path, &["predictor", "bin_center", "mean_delta_obs", "count"], rows)
}

/// `v, level, probability` over an even grid of latent responses.
pub fn write_category_curves(path: &Path, c: &CutPoints, lo: f64, hi: f64, steps: usize) -> Result<()> {
    let mut rows = Vec::new();
    for t in 0..=steps {
        let v = lo + (hi - lo) * t as f64 / steps.max(1) as f64;
        for (k, p) in category_probabilities(v, c).into_iter().enumerate() {
            rows.push(vec![fmt(v), (k + 1).to_string(), fmt(p)]);
        }
    }
    tsv(path, &["v", "level", "probability"], rows)
}

/// `group, aspect, mean_bias, users` from aligned posterior means.
pub fn write_group_bias(
    path: &Path,
    means: &[DVector<f64>],
    sizes: &[usize],
    aspects: &[String],
) -> Result<()> {
    let mut rows = Vec::new();
    for (g, m) in means.iter().enumerate() {
        for (a, name) in aspects.iter().enumerate() {
            rows.push(vec![g.to_string(), name.clone(), fmt(m[a]), sizes[g].to_string()]);
        }
    }
    tsv(path, &["group", "aspect", "mean_bias", "users"], rows)
}

/// `user_id, item_id, <aspect>...` expected ratings, then `<aspect>_bias`
/// labels for the user.
pub fn write_predictions(
    path: &Path,
    aspects: &[String],
    rows: &[(String, String, Vec<f64>, Vec<BiasLabel>)],
) -> Result<()> {
    let mut header: Vec<String> = vec!["user_id".into(), "item_id".into()];
    header.extend(aspects.iter().cloned());
    header.extend(aspects.iter().map(|a| format!("{a}_bias")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    tsv(
        path,
        &header_refs,
        rows.iter().map(|(u, i, e, l)| {
            let mut r = vec![u.clone(), i.clone()];
            r.extend(e.iter().map(|&x| fmt(x)));
            r.extend(l.iter().map(|x| x.as_str().to_string()));
            r
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::gibbs::fit;

    const TABLE: &str = "user_id,item_id,food,service\nu1,i1,5,4\nu1,i2,3,3\nu2,i1,4,5\nu3,i2,1,2\n";

    #[test]
    fn ratings_round_trip() {
        let data = read_ratings_from(TABLE.as_bytes(), 5, ',').unwrap();
        assert_eq!(data.aspect_names(), &["food".to_string(), "service".to_string()]);
        assert_eq!(data.len(), 4);
        let mut out = Vec::new();
        write_ratings_to(&mut out, &data, ',').unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), TABLE);
        let tabbed = TABLE.replace(',', "\t");
        let again = read_ratings_from(tabbed.as_bytes(), 5, '\t').unwrap();
        assert_eq!(again.observations(), data.observations());
    }

    #[test]
    fn pairs_ignore_extra_columns() {
        let pairs = read_pairs_from(TABLE.as_bytes(), ',').unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[3], ("u3".to_string(), "i2".to_string()));
        assert!(read_pairs_from("user_id\nu1\n".as_bytes(), ',').is_err());
    }

    #[test]
    fn ratings_errors_are_specific() {
        let bad = "user_id,item_id,a\nu1,i1,x\n";
        assert!(matches!(read_ratings_from(bad.as_bytes(), 5, ','), Err(Error::Parse(_))));
        let out = "user_id,item_id,a\nu1,i1,6\n";
        assert!(matches!(
            read_ratings_from(out.as_bytes(), 5, ','),
            Err(Error::RatingOutOfRange { value: 6, .. })
        ));
        let dup = "user_id,item_id,a\nu1,i1,2\nu1,i1,3\n";
        assert!(matches!(read_ratings_from(dup.as_bytes(), 5, ','), Err(Error::DuplicatePair { .. })));
        let short = "user_id,item_id\nu1,i1\n";
        assert!(read_ratings_from(short.as_bytes(), 5, ',').is_err());
    }

    fn small_model() -> FittedModel {
        let data = read_ratings_from(TABLE.as_bytes(), 5, ',').unwrap();
        let hp = Hyperparameters::with_groups(2, 2);
        let mut cfg = RunConfig::default_for(5);
        cfg.burn_in = 3;
        cfg.num_samples = 4;
        cfg.predict_draws = 2;
        FittedModel::new(fit(&data, &hp, &cfg).unwrap(), &data)
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let model = small_model();
        let bytes = encode_model(&model).unwrap();
        assert_eq!(&bytes[..8], ARCHIVE_MAGIC);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn archive_rejects_corruption() {
        let bytes = encode_model(&small_model()).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 99;
        assert!(matches!(decode_model(&wrong_version), Err(Error::Archive(_))));
        assert!(decode_model(b"nonsense").is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(decode_model(&trailing).is_err());
    }

    #[test]
    fn strict_resolution_reports_unknown_ids() {
        let model = small_model();
        assert!(matches!(
            model.predict("nobody", "i1", ColdStart::Strict),
            Err(Error::UnknownUser(u)) if u == "nobody"
        ));
        assert!(matches!(
            model.predict("u1", "nothing", ColdStart::Strict),
            Err(Error::UnknownItem(_))
        ));
        let p = model.predict("nobody", "nothing", ColdStart::Marginal).unwrap();
        assert!(p.expected.iter().all(|&x| (1.0..=5.0).contains(&x)));
    }

    #[test]
    fn user_bias_matches_snapshot_average() {
        let model = small_model();
        let s = &model.samples;
        let mut expect = DVector::zeros(2);
        for snap in &s.states {
            expect += &snap.m[snap.s[0]];
        }
        expect /= s.states.len() as f64;
        let got = model.user_bias("u1", ColdStart::Strict).unwrap();
        assert!((got - expect).norm() < 1e-12);
    }

    #[test]
    fn bias_labels_use_threshold() {
        assert_eq!(BiasLabel::of(0.3, 0.2), BiasLabel::Positive);
        assert_eq!(BiasLabel::of(-0.3, 0.2), BiasLabel::Negative);
        assert_eq!(BiasLabel::of(0.1, 0.2), BiasLabel::Neutral);
    }
}
