//! Ratings datasets: MovieLens-style loaders, deterministic user splits and
//! a synthetic generator with known factors.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::{FactorModel, Hyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub const MOVIELENS: RatingScale = RatingScale { min: 1.0, max: 5.0 };

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Bijection between raw external ids and dense 0-based indices, in order of
/// first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn sequential(n: usize) -> Self {
        let mut map = IdMap::default();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }

    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(raw.to_owned());
        self.index.insert(raw.to_owned(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> &str {
        &self.raw[index]
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Sparse user × item ratings; a pair is observed iff a triple exists.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    num_users: usize,
    num_items: usize,
    ratings: Vec<Rating>,
    scale: Option<RatingScale>,
    user_ids: IdMap,
    item_ids: IdMap,
}

impl RatingsDataset {
    /// Dataset over dense ids `0..num_users` × `0..num_items`.
    pub fn new(
        num_users: usize,
        num_items: usize,
        ratings: Vec<Rating>,
        scale: Option<RatingScale>,
    ) -> Result<Self> {
        Self::with_ids(
            IdMap::sequential(num_users),
            IdMap::sequential(num_items),
            ratings,
            scale,
        )
    }

    pub fn with_ids(
        user_ids: IdMap,
        item_ids: IdMap,
        ratings: Vec<Rating>,
        scale: Option<RatingScale>,
    ) -> Result<Self> {
        let (num_users, num_items) = (user_ids.len(), item_ids.len());
        let mut seen = std::collections::HashSet::with_capacity(ratings.len());
        for r in &ratings {
            if r.user >= num_users {
                return Err(Error::OutOfRange {
                    id: r.user,
                    bound: num_users,
                });
            }
            if r.item >= num_items {
                return Err(Error::OutOfRange {
                    id: r.item,
                    bound: num_items,
                });
            }
            if !r.value.is_finite() || scale.is_some_and(|s| !s.contains(r.value)) {
                return Err(Error::invalid(format!(
                    "rating {} for ({}, {}) outside the declared scale",
                    r.value, r.user, r.item
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::invalid(format!(
                    "duplicate rating for ({}, {})",
                    r.user, r.item
                )));
            }
        }
        Ok(RatingsDataset {
            num_users,
            num_items,
            ratings,
            scale,
            user_ids,
            item_ids,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn scale(&self) -> Option<RatingScale> {
        self.scale
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items];
        for r in &self.ratings {
            counts[r.item] += 1;
        }
        counts
    }

    /// `(item, rating)` lists per user, in triple order.
    pub fn by_user(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.num_users];
        for r in &self.ratings {
            out[r.user].push((r.item, r.value));
        }
        out
    }

    /// Same id space, keeping only triples accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&Rating) -> bool) -> RatingsDataset {
        RatingsDataset {
            ratings: self.ratings.iter().copied().filter(|r| keep(r)).collect(),
            ..self.clone()
        }
    }

    /// Writes the generic `user,item,rating` CSV with raw ids.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["user", "item", "rating"])?;
        for r in &self.ratings {
            w.write_record([
                self.user_ids.raw(r.user),
                self.item_ids.raw(r.item),
                &r.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// `user\titem\trating\ttimestamp`
    UData,
    /// `user::item::rating::timestamp`
    RatingsDat,
    /// header `user,item,rating`
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub ratings: usize,
    pub users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub path: PathBuf,
    pub format: DatasetFormat,
    #[serde(default)]
    pub scale: Option<RatingScale>,
    #[serde(default)]
    pub expected: Option<ExpectedCounts>,
}

impl DatasetDescriptor {
    pub fn movielens_100k(path: impl Into<PathBuf>) -> Self {
        DatasetDescriptor {
            name: "ml-100k".into(),
            path: path.into(),
            format: DatasetFormat::UData,
            scale: Some(RatingScale::MOVIELENS),
            expected: Some(ExpectedCounts {
                ratings: 100_000,
                users: 943,
                items: 1682,
            }),
        }
    }

    pub fn movielens_1m(path: impl Into<PathBuf>) -> Self {
        DatasetDescriptor {
            name: "ml-1m".into(),
            path: path.into(),
            format: DatasetFormat::RatingsDat,
            scale: Some(RatingScale::MOVIELENS),
            expected: Some(ExpectedCounts {
                ratings: 1_000_209,
                users: 6040,
                items: 3706,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: RatingsDataset,
    pub warnings: Vec<String>,
}

pub fn load_dataset(desc: &DatasetDescriptor) -> Result<LoadedDataset> {
    let text = fs::read_to_string(&desc.path)?;
    let path = desc.path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };

    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut ratings = Vec::new();
    let mut seen = HashMap::new();
    let mut push = |line: usize, u: &str, i: &str, r: &str| -> Result<()> {
        let value: f64 = r
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("bad rating {r:?}: {e}")))?;
        if !value.is_finite() || desc.scale.is_some_and(|s| !s.contains(value)) {
            return Err(parse_err(line, format!("rating {value} outside the declared scale")));
        }
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(parse_err(line, "empty id".into()));
        }
        let user = users.intern(u);
        let item = items.intern(i);
        if let Some(first) = seen.insert((user, item), line) {
            return Err(parse_err(
                line,
                format!("duplicate rating for user {u} item {i} (first on line {first})"),
            ));
        }
        ratings.push(Rating { user, item, value });
        Ok(())
    };

    match desc.format {
        DatasetFormat::UData | DatasetFormat::RatingsDat => {
            for (n, raw) in text.lines().enumerate() {
                let line = n + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = if desc.format == DatasetFormat::UData {
                    raw.split(['\t', ' ']).filter(|f| !f.is_empty()).collect()
                } else {
                    raw.split("::").collect()
                };
                // timestamps, when present, are ignored
                if fields.len() < 3 {
                    return Err(parse_err(line, format!("expected at least 3 fields, got {}", fields.len())));
                }
                push(line, fields[0], fields[1], fields[2])?;
            }
        }
        DatasetFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            let headers = rdr.headers()?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(name))
                    .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
            };
            if !text.trim().is_empty() {
                let (cu, ci, cr) = (col("user")?, col("item")?, col("rating")?);
                for rec in rdr.records() {
                    let rec = rec.map_err(|e| {
                        let line = e.position().map_or(0, |p| p.line() as usize);
                        parse_err(line, e.to_string())
                    })?;
                    let line = rec.position().map_or(0, |p| p.line() as usize);
                    let field = |c: usize| {
                        rec.get(c)
                            .ok_or_else(|| parse_err(line, format!("missing field {c}")))
                    };
                    push(line, field(cu)?, field(ci)?, field(cr)?)?;
                }
            }
        }
    }

    let mut warnings = Vec::new();
    if ratings.is_empty() {
        warnings.push(format!("{path}: no ratings found"));
    }
    if let Some(exp) = desc.expected {
        let got = (ratings.len(), users.len(), items.len());
        if got != (exp.ratings, exp.users, exp.items) {
            warnings.push(format!(
                "{path}: expected {} ratings / {} users / {} items, parsed {} / {} / {}",
                exp.ratings, exp.users, exp.items, got.0, got.1, got.2
            ));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let dataset = RatingsDataset::with_ids(users, items, ratings, desc.scale)?;
    Ok(LoadedDataset { dataset, warnings })
}

/// User-level partition into warm (training) and cold (interviewed) users.
#[derive(Debug, Clone)]
pub struct WarmColdSplit {
    /// Same id space as the source, holding only warm users' ratings.
    pub warm: RatingsDataset,
    pub warm_users: Vec<usize>,
    pub cold_users: Vec<usize>,
}

/// The first `floor(warm_fraction · m)` users of a seeded shuffle are warm.
pub fn split_warm_cold(dataset: &RatingsDataset, warm_fraction: f64, seed: u64) -> Result<WarmColdSplit> {
    if !(warm_fraction > 0.0 && warm_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "warm fraction must be in (0, 1), got {warm_fraction}"
        )));
    }
    let m = dataset.num_users();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_warm = (warm_fraction * m as f64).floor() as usize;
    let mut warm_users = order[..n_warm].to_vec();
    let mut cold_users = order[n_warm..].to_vec();
    warm_users.sort_unstable();
    cold_users.sort_unstable();
    let mut is_warm = vec![false; m];
    for &u in &warm_users {
        is_warm[u] = true;
    }
    Ok(WarmColdSplit {
        warm: dataset.filtered(|r| is_warm[r.user]),
        warm_users,
        cold_users,
    })
}

/// Rating-level hold-out: returns `(train, test)` with roughly
/// `test_fraction` of the triples in `test`.
pub fn split_ratings(
    dataset: &RatingsDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(RatingsDataset, RatingsDataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_test: Vec<bool> = (0..dataset.len())
        .map(|_| rng.random::<f64>() < test_fraction)
        .collect();
    let mut k = 0;
    let train = dataset.filtered(|_| {
        k += 1;
        !in_test[k - 1]
    });
    let mut k = 0;
    let test = dataset.filtered(|_| {
        k += 1;
        in_test[k - 1]
    });
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Probability that a (user, item) pair is observed.
    pub density: f64,
    /// Standard deviation of every latent factor entry.
    pub factor_std: f64,
}

impl Default for SynthSpec {
    /// 300 users × 200 items, d = 8, half the pairs observed, noise 0.3.
    fn default() -> Self {
        SynthSpec {
            density: 0.5,
            ..SynthSpec::new(300, 200, 8, 0.3, 0)
        }
    }
}

impl SynthSpec {
    pub fn new(users: usize, items: usize, dim: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            users,
            items,
            dim,
            noise_sigma,
            seed,
            density: 1.0,
            factor_std: 1.0,
        }
    }
}

/// Samples Gaussian factors and emits `R = UᵀV + ε` on the observed pairs,
/// returning the ground-truth model alongside.
pub fn synth_generate(spec: &SynthSpec) -> Result<(RatingsDataset, FactorModel)> {
    if spec.users == 0 || spec.items == 0 || spec.dim == 0 {
        return Err(Error::invalid("synthetic sizes must be positive"));
    }
    if !(spec.noise_sigma >= 0.0) || !(spec.factor_std > 0.0) || !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::invalid("bad synthetic noise, scale or density"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prior = Normal::new(0.0, spec.factor_std).expect("positive std");
    let d = spec.dim;
    let user_factors: Vec<f64> = (0..spec.users * d).map(|_| prior.sample(&mut rng)).collect();
    let item_factors: Vec<f64> = (0..spec.items * d).map(|_| prior.sample(&mut rng)).collect();
    let hyper = Hyperparameters {
        latent_dim: d,
        seed: spec.seed,
        ..Hyperparameters::default()
    };
    let model = FactorModel::from_parts(hyper, spec.users, spec.items, user_factors, item_factors)?;
    let mut ratings = Vec::new();
    for user in 0..spec.users {
        for item in 0..spec.items {
            if spec.density < 1.0 && rng.random::<f64>() >= spec.density {
                continue;
            }
            let noise = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                0.0
            };
            ratings.push(Rating {
                user,
                item,
                value: model.predict(user, item)? + noise,
            });
        }
    }
    let dataset = RatingsDataset::new(spec.users, spec.items, ratings, None)?;
    Ok((dataset, model))
}

/// Writes `ratings` in u.data layout (timestamp 0); handy for fixtures.
pub fn write_udata(dataset: &RatingsDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in dataset.ratings() {
        writeln!(
            f,
            "{}\t{}\t{}\t0",
            dataset.user_ids().raw(r.user),
            dataset.item_ids().raw(r.item),
            r.value
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn desc(path: PathBuf, format: DatasetFormat) -> DatasetDescriptor {
        DatasetDescriptor {
            name: "t".into(),
            path,
            format,
            scale: Some(RatingScale::MOVIELENS),
            expected: None,
        }
    }

    #[test]
    fn parses_udata_and_reindexes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u.data", "196\t242\t3\t881250949\n186\t302\t3\t891717742\n196\t302\t4\t1\n");
        let ds = load_dataset(&desc(p, DatasetFormat::UData)).unwrap().dataset;
        assert_eq!((ds.num_users(), ds.num_items(), ds.len()), (2, 2, 3));
        assert_eq!(ds.user_ids().raw(0), "196");
        assert_eq!(ds.item_ids().get("302"), Some(1));
        assert_eq!(ds.ratings()[2], Rating { user: 0, item: 1, value: 4.0 });
    }

    #[test]
    fn parses_ratings_dat() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "ratings.dat", "1::1193::5::978300760\n1::661::3::978302109\n");
        let ds = load_dataset(&desc(p, DatasetFormat::RatingsDat)).unwrap().dataset;
        assert_eq!((ds.num_users(), ds.num_items(), ds.len()), (1, 2, 2));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u.data", "1\t1\t3\t0\n1\t2\tx\t0\n");
        match load_dataset(&desc(p, DatasetFormat::UData)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(&dir, "dup.data", "1\t1\t3\t0\n1\t1\t4\t0\n");
        assert!(matches!(
            load_dataset(&desc(p, DatasetFormat::UData)),
            Err(Error::Parse { line: 2, .. })
        ));
        let p = write(&dir, "scale.data", "1\t1\t7\t0\n");
        assert!(load_dataset(&desc(p, DatasetFormat::UData)).is_err());
    }

    #[test]
    fn empty_file_warns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u.data", "");
        let loaded = load_dataset(&desc(p, DatasetFormat::UData)).unwrap();
        assert!(loaded.dataset.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn count_mismatch_warns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u.data", "1\t1\t3\t0\n");
        let mut d = desc(p, DatasetFormat::UData);
        d.expected = Some(ExpectedCounts { ratings: 2, users: 1, items: 1 });
        assert_eq!(load_dataset(&d).unwrap().warnings.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "user,item,rating\na,x,1.5\nb,x,2\na,y,5\n");
        let d = desc(p, DatasetFormat::Csv);
        let first = load_dataset(&d).unwrap().dataset;
        let out = dir.path().join("again.csv");
        first.write_csv(&out).unwrap();
        let second = load_dataset(&desc(out, DatasetFormat::Csv)).unwrap().dataset;
        assert_eq!(first, second);
    }

    #[test]
    fn warm_cold_split_floor_and_determinism() {
        let ratings = (0..943).map(|u| Rating { user: u, item: 0, value: 3.0 }).collect();
        let ds = RatingsDataset::new(943, 1, ratings, None).unwrap();
        let a = split_warm_cold(&ds, 0.7, 9).unwrap();
        assert_eq!(a.warm_users.len(), 660);
        assert_eq!(a.cold_users.len(), 283);
        assert_eq!(a.warm.len(), 660);
        let b = split_warm_cold(&ds, 0.7, 9).unwrap();
        assert_eq!(a.warm_users, b.warm_users);
        let c = split_warm_cold(&ds, 1.0 - 1e-4, 9).unwrap();
        assert_eq!(c.cold_users.len(), 1);
        let cold = c.cold_users[0];
        assert!(c.warm.ratings().iter().all(|r| r.user != cold));
        assert!(split_warm_cold(&ds, 1.0, 9).is_err());
        assert!(split_warm_cold(&ds, 0.0, 9).is_err());
    }

    #[test]
    fn synthetic_noise_free_is_exact() {
        let (ds, model) = synth_generate(&SynthSpec::new(10, 12, 3, 0.0, 4)).unwrap();
        assert_eq!(ds.len(), 120);
        for r in ds.ratings() {
            assert_eq!(r.value, model.predict(r.user, r.item).unwrap());
        }
    }

    #[test]
    fn synthetic_noise_level() {
        let (ds, model) = synth_generate(&SynthSpec::new(100, 120, 4, 0.5, 17)).unwrap();
        let n = ds.len() as f64;
        let resid: Vec<f64> = ds
            .ratings()
            .iter()
            .map(|r| r.value - model.predict(r.user, r.item).unwrap())
            .collect();
        let mean = resid.iter().sum::<f64>() / n;
        let std = (resid.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.5).abs() < 0.025, "{std}");
    }

    #[test]
    fn synthetic_is_reproducible() {
        let spec = SynthSpec { density: 0.3, ..SynthSpec::new(20, 30, 2, 0.1, 5) };
        let (a, _) = synth_generate(&spec).unwrap();
        let (b, _) = synth_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.write_csv(&dir.path().join("a.csv")).unwrap();
        b.write_csv(&dir.path().join("b.csv")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a.csv")).unwrap(),
            fs::read(dir.path().join("b.csv")).unwrap()
        );
    }
}
