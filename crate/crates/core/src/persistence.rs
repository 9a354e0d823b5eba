//! On-disk layout of a fit: one draws CSV per chain, a chain index and a
//! `manifest.json` with checksums.
//!
//! Draw columns are `iteration` followed by parameter columns sorted by name
//! and then by tick: `eta.s001`, `mu_y[3]`, `mu_y[12]`, `psi.s001[0]`, …
//! Columns of a channel the mode does not use are dropped when they hold the
//! same value in every draw; that value is kept under `constants` in the
//! manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sampler::{ChainDraws, ChainMeta, Draw, Mode, PosteriorDraws, SubjectLayout};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const DRAWS_INDEX: &str = "draws_index.csv";

pub fn draws_file(chain: usize) -> String {
    format!("draws_chain{chain}.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub chain: usize,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// `None` for a block that made no proposals.
    pub acceptance: BTreeMap<String, Option<f64>>,
    pub file: String,
    pub rows: usize,
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: Mode,
    /// Resolved configuration of the run, as given by the caller.
    pub config: serde_json::Value,
    pub global_ticks: Vec<i64>,
    pub subjects: Vec<SubjectLayout>,
    pub chains: Vec<ChainEntry>,
    /// Dropped columns and their value, in shortest round-trip notation.
    pub constants: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == name)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Channel {
    Always,
    Longitudinal,
    Survival,
    Association,
}

impl Channel {
    fn present(self, mode: Mode) -> bool {
        match self {
            Channel::Always => true,
            Channel::Longitudinal => mode.has_longitudinal(),
            Channel::Survival => mode.has_survival(),
            Channel::Association => mode.samples_phi(),
        }
    }
}

struct Column {
    name: String,
    base: String,
    tick: Option<i64>,
    channel: Channel,
}

const SCALARS: [(&str, Channel); 12] = [
    ("g_eta", Channel::Survival),
    ("g_gamma", Channel::Longitudinal),
    ("g_phi", Channel::Association),
    ("mu_phi", Channel::Association),
    ("phi", Channel::Association),
    ("sigma2_mu_h", Channel::Survival),
    ("sigma2_mu_y", Channel::Longitudinal),
    ("sigma2_y", Channel::Longitudinal),
    ("tau2", Channel::Always),
    ("theta_mu_h", Channel::Survival),
    ("theta_mu_y", Channel::Longitudinal),
    ("theta_psi", Channel::Always),
];

/// Columns in canonical (flattening) order.
fn canonical_columns(global: &[i64], subjects: &[SubjectLayout]) -> Vec<Column> {
    let mut cols = Vec::new();
    let mut scalar = |base: String, channel| {
        cols.push(Column {
            name: base.clone(),
            base,
            tick: None,
            channel,
        })
    };
    for (name, ch) in SCALARS {
        scalar(name.to_string(), ch);
    }
    for s in subjects {
        scalar(format!("gamma.{}", s.id), Channel::Longitudinal);
        scalar(format!("eta.{}", s.id), Channel::Survival);
        scalar(format!("sigma2_psi.{}", s.id), Channel::Always);
    }
    for (base, ch) in [("mu_y", Channel::Longitudinal), ("mu_h", Channel::Survival)] {
        for &t in global {
            cols.push(Column {
                name: format!("{base}[{t}]"),
                base: base.to_string(),
                tick: Some(t),
                channel: ch,
            });
        }
    }
    for s in subjects {
        let base = format!("psi.{}", s.id);
        for &t in &s.ticks {
            cols.push(Column {
                name: format!("{base}[{t}]"),
                base: base.clone(),
                tick: Some(t),
                channel: Channel::Always,
            });
        }
    }
    cols
}

fn flatten(d: &Draw) -> Vec<f64> {
    let mut v = vec![
        d.g_eta,
        d.g_gamma,
        d.g_phi,
        d.mu_phi,
        d.phi,
        d.sigma2_mu_h,
        d.sigma2_mu_y,
        d.sigma2_y,
        d.tau2,
        d.theta_mu_h,
        d.theta_mu_y,
        d.theta_psi,
    ];
    for i in 0..d.gamma.len() {
        v.push(d.gamma[i]);
        v.push(d.eta[i]);
        v.push(d.sigma2_psi[i]);
    }
    v.extend(&d.mu_y);
    v.extend(&d.mu_h);
    for p in &d.psi {
        v.extend(p);
    }
    v
}

fn unflatten(iteration: usize, v: &[f64], n_global: usize, subjects: &[SubjectLayout]) -> Draw {
    let m = subjects.len();
    let mut k = SCALARS.len();
    let mut gamma = Vec::with_capacity(m);
    let mut eta = Vec::with_capacity(m);
    let mut sigma2_psi = Vec::with_capacity(m);
    for _ in 0..m {
        gamma.push(v[k]);
        eta.push(v[k + 1]);
        sigma2_psi.push(v[k + 2]);
        k += 3;
    }
    let mu_y = v[k..k + n_global].to_vec();
    k += n_global;
    let mu_h = v[k..k + n_global].to_vec();
    k += n_global;
    let mut psi = Vec::with_capacity(m);
    for s in subjects {
        psi.push(v[k..k + s.ticks.len()].to_vec());
        k += s.ticks.len();
    }
    Draw {
        iteration,
        mu_y,
        mu_h,
        psi,
        gamma,
        eta,
        phi: v[4],
        theta_psi: v[11],
        theta_mu_y: v[10],
        theta_mu_h: v[9],
        sigma2_y: v[7],
        sigma2_psi,
        sigma2_mu_y: v[6],
        sigma2_mu_h: v[5],
        tau2: v[8],
        g_gamma: v[1],
        g_eta: v[0],
        g_phi: v[2],
        mu_phi: v[3],
    }
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn parse_f64(path: &Path, row: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::format(path, format!("row {row}: `{s}` is not a number")))
}

/// Writes every chain, the chain index and the manifest into `dir`.
pub fn write_draws(
    draws: &PosteriorDraws,
    dir: &Path,
    seed: u64,
    config: serde_json::Value,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cols = canonical_columns(&draws.global_ticks, &draws.subjects);
    let flat: Vec<Vec<Vec<f64>>> = draws
        .chains
        .iter()
        .map(|c| c.draws.iter().map(flatten).collect())
        .collect();
    for rows in flat.iter().flatten() {
        if rows.len() != cols.len() {
            return Err(Error::Dimension(format!(
                "draw has {} values but the layout needs {}",
                rows.len(),
                cols.len()
            )));
        }
    }

    let mut constants = BTreeMap::new();
    let mut keep = Vec::new();
    let first = flat.iter().flatten().next();
    for (j, c) in cols.iter().enumerate() {
        let constant = match first {
            Some(f) => flat.iter().flatten().all(|r| same_bits(r[j], f[j])),
            None => false,
        };
        if !c.channel.present(draws.mode) && constant {
            constants.insert(
                c.name.clone(),
                first.map(|f| f[j]).unwrap_or(f64::NAN).to_string(),
            );
        } else {
            keep.push(j);
        }
    }
    keep.sort_by(|&a, &b| (&cols[a].base, cols[a].tick).cmp(&(&cols[b].base, cols[b].tick)));

    let mut chains = Vec::new();
    let mut files = Vec::new();
    let mut index = String::from("chain,file,rows,first_iteration,last_iteration\n");
    for (c, rows) in draws.chains.iter().zip(&flat) {
        let name = draws_file(c.meta.chain);
        let path = dir.join(&name);
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["iteration".to_string()];
        header.extend(keep.iter().map(|&j| cols[j].name.clone()));
        w.write_record(&header)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        for (d, r) in c.draws.iter().zip(rows) {
            let mut rec = vec![d.iteration.to_string()];
            rec.extend(keep.iter().map(|&j| r[j].to_string()));
            w.write_record(&rec)
                .map_err(|e| Error::format(&path, e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        let (first_it, last_it) = match (c.draws.first(), c.draws.last()) {
            (Some(a), Some(b)) => (a.iteration.to_string(), b.iteration.to_string()),
            _ => (String::new(), String::new()),
        };
        index.push_str(&format!(
            "{},{name},{},{first_it},{last_it}\n",
            c.meta.chain,
            c.draws.len()
        ));
        files.push(FileEntry {
            path: name.clone(),
            sha256: sha256_hex(&bytes),
        });
        chains.push(ChainEntry {
            chain: c.meta.chain,
            seed: c.meta.seed,
            iterations: c.meta.iterations,
            burn_in: c.meta.burn_in,
            thin: c.meta.thin,
            acceptance: c
                .meta
                .acceptance
                .iter()
                .map(|(k, v)| (k.clone(), v.is_finite().then_some(*v)))
                .collect(),
            file: name,
            rows: c.draws.len(),
            empty: c.draws.is_empty(),
        });
    }
    let index_path = dir.join(DRAWS_INDEX);
    write_text(&index_path, &index)?;
    files.push(FileEntry {
        path: DRAWS_INDEX.to_string(),
        sha256: sha256_hex(index.as_bytes()),
    });

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        seed,
        mode: draws.mode,
        config,
        global_ticks: draws.global_ticks.clone(),
        subjects: draws.subjects.clone(),
        chains,
        constants,
        files,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    let mut text =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    text.push('\n');
    write_text(&path, &text)
}

/// Reads the manifest, refusing schema versions newer than this build.
pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::format(&path, "missing schema_version"))?;
    if found > u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            supported: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::format(&path, e.to_string()))
}

/// Adds (or refreshes) the checksum of `name` inside `dir` and rewrites the
/// manifest.
pub fn register_file(dir: &Path, manifest: &mut RunManifest, name: &str) -> Result<()> {
    let sha256 = sha256_file(&dir.join(name))?;
    match manifest.files.iter_mut().find(|f| f.path == name) {
        Some(f) => f.sha256 = sha256,
        None => manifest.files.push(FileEntry {
            path: name.to_string(),
            sha256,
        }),
    }
    write_manifest(dir, manifest)
}

/// Checks every file listed in the manifest.
pub fn verify(dir: &Path, manifest: &RunManifest) -> Result<()> {
    for f in &manifest.files {
        let path = dir.join(&f.path);
        if sha256_file(&path)? != f.sha256 {
            return Err(Error::Checksum(path));
        }
    }
    Ok(())
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let manifest = read_manifest(dir)?;
    verify(dir, &manifest)?;
    let cols = canonical_columns(&manifest.global_ticks, &manifest.subjects);
    let position: HashMap<&str, usize> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.name.as_str(), j))
        .collect();
    let mut template = vec![f64::NAN; cols.len()];
    let mut filled = vec![false; cols.len()];
    let manifest_path = dir.join(MANIFEST);
    for (name, value) in &manifest.constants {
        let j = *position.get(name.as_str()).ok_or_else(|| {
            Error::format(&manifest_path, format!("unknown constant column `{name}`"))
        })?;
        template[j] = parse_f64(&manifest_path, 0, value)?;
        filled[j] = true;
    }

    let mut chains = Vec::with_capacity(manifest.chains.len());
    for entry in &manifest.chains {
        let path: PathBuf = dir.join(&entry.file);
        let mut rdr = csv::ReaderBuilder::new()
            .from_path(&path)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        let header = rdr
            .headers()
            .map_err(|e| Error::format(&path, e.to_string()))?
            .clone();
        if header.get(0) != Some("iteration") {
            return Err(Error::format(&path, "first column must be `iteration`"));
        }
        let mut targets = Vec::with_capacity(header.len() - 1);
        let mut seen = filled.clone();
        for name in header.iter().skip(1) {
            let j = *position
                .get(name)
                .ok_or_else(|| Error::format(&path, format!("unknown column `{name}`")))?;
            if seen[j] {
                return Err(Error::format(&path, format!("column `{name}` given twice")));
            }
            seen[j] = true;
            targets.push(j);
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::format(
                &path,
                format!("column `{}` missing", cols[j].name),
            ));
        }
        let mut draws = Vec::with_capacity(entry.rows);
        for (r, rec) in rdr.records().enumerate() {
            let row = r + 2;
            let rec = rec.map_err(|e| Error::format(&path, e.to_string()))?;
            let iteration = rec[0].parse::<usize>().map_err(|_| {
                Error::format(&path, format!("row {row}: bad iteration `{}`", &rec[0]))
            })?;
            let mut v = template.clone();
            for (k, &j) in targets.iter().enumerate() {
                v[j] = parse_f64(&path, row, &rec[k + 1])?;
            }
            draws.push(unflatten(
                iteration,
                &v,
                manifest.global_ticks.len(),
                &manifest.subjects,
            ));
        }
        if draws.len() != entry.rows {
            return Err(Error::format(
                &path,
                format!(
                    "manifest lists {} rows, file has {}",
                    entry.rows,
                    draws.len()
                ),
            ));
        }
        chains.push(ChainDraws {
            meta: ChainMeta {
                chain: entry.chain,
                seed: entry.seed,
                iterations: entry.iterations,
                burn_in: entry.burn_in,
                thin: entry.thin,
                acceptance: entry
                    .acceptance
                    .iter()
                    .map(|(k, v)| (k.clone(), v.unwrap_or(f64::NAN)))
                    .collect(),
            },
            draws,
        });
    }
    Ok(PosteriorDraws {
        mode: manifest.mode,
        global_ticks: manifest.global_ticks,
        subjects: manifest.subjects,
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> (Vec<i64>, Vec<SubjectLayout>) {
        (
            vec![3, 12, 20],
            vec![
                SubjectLayout {
                    id: "s002".into(),
                    ticks: vec![3, 12],
                },
                SubjectLayout {
                    id: "s001".into(),
                    ticks: vec![12, 20],
                },
            ],
        )
    }

    fn draw(it: usize, x: f64) -> Draw {
        Draw {
            iteration: it,
            mu_y: vec![x, 0.1, -0.3],
            mu_h: vec![-1.0, -1.5, -2.0],
            psi: vec![vec![x * 0.5, 0.25], vec![1e-300, -7.0 / 3.0]],
            gamma: vec![0.3, x],
            eta: vec![0.0, 0.0],
            phi: 0.0,
            theta_psi: -0.4 + x * 1e-3,
            theta_mu_y: 4.0,
            theta_mu_h: 2.0,
            sigma2_y: 0.01 * x,
            sigma2_psi: vec![0.5, 0.7],
            sigma2_mu_y: 1.0,
            sigma2_mu_h: 1.0,
            tau2: 0.2,
            g_gamma: 50.0,
            g_eta: 3.0,
            g_phi: 1.0,
            mu_phi: 0.0,
        }
    }

    fn sample(mode: Mode, chains: usize, per: usize) -> PosteriorDraws {
        let (global_ticks, subjects) = layout();
        PosteriorDraws {
            mode,
            global_ticks,
            subjects,
            chains: (0..chains)
                .map(|c| ChainDraws {
                    meta: ChainMeta {
                        chain: c,
                        seed: 10 + c as u64,
                        iterations: 20,
                        burn_in: 10,
                        thin: 2,
                        acceptance: BTreeMap::from([
                            ("theta_psi".to_string(), 0.31),
                            ("idle".to_string(), f64::NAN),
                        ]),
                    },
                    draws: (0..per)
                        .map(|k| draw(10 + 2 * k, 1.0 + k as f64 + c as f64 / 7.0))
                        .collect(),
                })
                .collect(),
        }
    }

    fn same(a: &PosteriorDraws, b: &PosteriorDraws) -> bool {
        let acc_eq = a.chains.iter().zip(&b.chains).all(|(x, y)| {
            x.meta.acceptance.len() == y.meta.acceptance.len()
                && x.meta
                    .acceptance
                    .iter()
                    .zip(&y.meta.acceptance)
                    .all(|((k1, v1), (k2, v2))| k1 == k2 && same_bits(*v1, *v2))
        });
        let strip = |p: &PosteriorDraws| {
            let mut q = p.clone();
            for c in &mut q.chains {
                c.meta.acceptance.clear();
            }
            q
        };
        acc_eq && strip(a) == strip(b)
    }

    #[test]
    fn round_trip_two_chains() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample(Mode::HgpOnly, 2, 4);
        let m = write_draws(&d, dir.path(), 10, serde_json::json!({"k": 1})).unwrap();
        assert!(dir.path().join("draws_chain0.csv").exists());
        assert!(dir.path().join("draws_chain1.csv").exists());
        assert_eq!(
            fs::read_to_string(dir.path().join(DRAWS_INDEX))
                .unwrap()
                .lines()
                .count(),
            3
        );
        assert!(m.constants.contains_key("mu_h[12]"));
        assert!(m.constants.contains_key("phi"));
        assert!(!m.constants.contains_key("theta_psi"));
        let back = read_draws(dir.path()).unwrap();
        assert!(same(&d, &back));
    }

    #[test]
    fn columns_sorted_by_name_then_tick() {
        let dir = tempfile::tempdir().unwrap();
        write_draws(
            &sample(Mode::Jhgp, 1, 2),
            dir.path(),
            1,
            serde_json::Value::Null,
        )
        .unwrap();
        let text = fs::read_to_string(dir.path().join("draws_chain0.csv")).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(header[0], "iteration");
        let p3 = header.iter().position(|h| *h == "mu_y[3]").unwrap();
        let p12 = header.iter().position(|h| *h == "mu_y[12]").unwrap();
        let p20 = header.iter().position(|h| *h == "mu_y[20]").unwrap();
        assert!(p3 < p12 && p12 < p20);
        assert!(
            header.iter().position(|h| *h == "gamma.s001").unwrap()
                < header.iter().position(|h| *h == "gamma.s002").unwrap()
        );
        assert!(header.iter().position(|h| *h == "eta.s001").unwrap() < p3);
    }

    #[test]
    fn empty_draws_write_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample(Mode::Jhgp, 1, 0);
        let m = write_draws(&d, dir.path(), 1, serde_json::Value::Null).unwrap();
        assert!(m.chains[0].empty);
        let text = fs::read_to_string(dir.path().join("draws_chain0.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back = read_draws(dir.path()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_draws(
            &sample(Mode::Jhgp, 1, 3),
            dir.path(),
            1,
            serde_json::Value::Null,
        )
        .unwrap();
        let p = dir.path().join("draws_chain0.csv");
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("\n");
        fs::write(&p, text).unwrap();
        assert!(matches!(read_draws(dir.path()), Err(Error::Checksum(_))));
    }

    #[test]
    fn newer_schema_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_draws(
            &sample(Mode::Jhgp, 1, 1),
            dir.path(),
            1,
            serde_json::Value::Null,
        )
        .unwrap();
        m.schema_version = SCHEMA_VERSION + 1;
        write_manifest(dir.path(), &m).unwrap();
        let err = read_draws(dir.path()).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { .. }));
        assert!(err.to_string().contains("newer"));
    }

    #[test]
    fn writes_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let d = sample(Mode::Jhgp, 2, 3);
        write_draws(&d, a.path(), 5, serde_json::json!({"x": [1, 2]})).unwrap();
        write_draws(&d, b.path(), 5, serde_json::json!({"x": [1, 2]})).unwrap();
        for f in [
            "draws_chain0.csv",
            "draws_chain1.csv",
            DRAWS_INDEX,
            MANIFEST,
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn registered_file_is_verified() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_draws(
            &sample(Mode::Jhgp, 1, 1),
            dir.path(),
            1,
            serde_json::Value::Null,
        )
        .unwrap();
        write_text(&dir.path().join("summary.csv"), "a,b\n").unwrap();
        register_file(dir.path(), &mut m, "summary.csv").unwrap();
        let m2 = read_manifest(dir.path()).unwrap();
        verify(dir.path(), &m2).unwrap();
        write_text(&dir.path().join("summary.csv"), "a,c\n").unwrap();
        assert!(verify(dir.path(), &m2).is_err());
    }
}
