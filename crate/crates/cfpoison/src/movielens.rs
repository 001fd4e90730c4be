//! MovieLens-format ingestion and the plain ratings format used for re-serialization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cfpoison_core::ratings::SparseRatings;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("no ratings left after keeping users with at least {min_ratings} ratings")]
    Empty { min_ratings: usize },
    #[error(transparent)]
    Ratings(#[from] cfpoison_core::Error),
}

/// How raw ratings are filtered and rescaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub min_ratings: usize,
    /// Range of the file's ratings.
    pub native: (f64, f64),
    /// Range the ratings are mapped onto.
    pub target: (f64, f64),
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_ratings: 20,
            native: (0.5, 5.0),
            target: (-2.0, 2.0),
        }
    }
}

impl LoadOptions {
    pub fn shift(&self, r: f64) -> f64 {
        let (lo, hi) = self.native;
        let (tlo, thi) = self.target;
        tlo + (r - lo) * (thi - tlo) / (hi - lo)
    }
}

/// Ratings with their original identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ratings: SparseRatings,
    /// Original id of each dense user index.
    pub user_ids: Vec<u64>,
    /// Original id of each dense item index.
    pub item_ids: Vec<u64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> LoadError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => LoadError::Io {
            path: path.display().to_string(),
            source,
        },
        kind => LoadError::Malformed {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads `(user id, item id, rating)` triples from the first three columns of a CSV with a header.
fn read_triples(path: &Path) -> Result<Vec<(u64, u64, f64)>, LoadError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize, name: &str| {
            record.get(k).map(str::trim).ok_or_else(|| LoadError::Malformed {
                line,
                msg: format!("missing {name} column"),
            })
        };
        let user = field(0, "user")?.parse::<u64>().map_err(|e| LoadError::Malformed {
            line,
            msg: format!("bad user id: {e}"),
        })?;
        let item = field(1, "item")?.parse::<u64>().map_err(|e| LoadError::Malformed {
            line,
            msg: format!("bad item id: {e}"),
        })?;
        let rating = field(2, "rating")?.parse::<f64>().map_err(|e| LoadError::Malformed {
            line,
            msg: format!("bad rating: {e}"),
        })?;
        if !rating.is_finite() {
            return Err(LoadError::Malformed {
                line,
                msg: "rating is not finite".into(),
            });
        }
        out.push((user, item, rating));
    }
    Ok(out)
}

/// Densifies ids in increasing order of the original id.
fn densify(triples: Vec<(u64, u64, f64)>) -> Result<Dataset, LoadError> {
    let users: BTreeMap<u64, usize> = triples
        .iter()
        .map(|t| t.0)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, id)| (id, k))
        .collect();
    let items: BTreeMap<u64, usize> = triples
        .iter()
        .map(|t| t.1)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, id)| (id, k))
        .collect();
    let ratings = SparseRatings::new(
        users.len(),
        items.len(),
        triples.iter().map(|&(u, i, r)| (users[&u], items[&i], r)),
    )?;
    Ok(Dataset {
        ratings,
        user_ids: users.into_keys().collect(),
        item_ids: items.into_keys().collect(),
    })
}

/// Loads `userId,movieId,rating,timestamp`, drops users with fewer than
/// `min_ratings` ratings, densifies ids and rescales ratings.
pub fn load_movielens(path: &Path, opts: &LoadOptions) -> Result<Dataset, LoadError> {
    let triples = read_triples(path)?;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for t in &triples {
        *counts.entry(t.0).or_default() += 1;
    }
    let kept: Vec<(u64, u64, f64)> = triples
        .into_iter()
        .filter(|t| counts[&t.0] >= opts.min_ratings)
        .map(|(u, i, r)| (u, i, opts.shift(r)))
        .collect();
    if kept.is_empty() {
        return Err(LoadError::Empty {
            min_ratings: opts.min_ratings,
        });
    }
    densify(kept)
}

/// Loads ratings already on the working scale (`user,item,rating` with a header).
pub fn load_ratings(path: &Path) -> Result<Dataset, LoadError> {
    let triples = read_triples(path)?;
    if triples.is_empty() {
        return Err(LoadError::Empty { min_ratings: 0 });
    }
    densify(triples)
}

/// Keeps the first `max_users` users and `max_items` items (by dense index).
pub fn subset(data: &Dataset, max_users: usize, max_items: usize) -> Result<Dataset, LoadError> {
    let m = data.ratings.num_users().min(max_users);
    let n = data.ratings.num_items().min(max_items);
    let kept = data
        .ratings
        .entries()
        .iter()
        .filter(|r| r.user < m && r.item < n)
        .map(|r| (data.user_ids[r.user], data.item_ids[r.item], r.value))
        .collect::<Vec<_>>();
    if kept.is_empty() {
        return Err(LoadError::Empty { min_ratings: 0 });
    }
    densify(kept)
}

/// Writes ratings with their original ids; [`load_ratings`] reads them back unchanged.
pub fn write_ratings(path: &Path, data: &Dataset) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "userId,movieId,rating")?;
    for r in data.ratings.entries() {
        writeln!(w, "{},{},{}", data.user_ids[r.user], data.item_ids[r.item], r.value)?;
    }
    w.flush()
}

/// Sidecar mapping dense indices back to original ids.
pub fn write_id_map(path: &Path, data: &Dataset) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "kind,index,id")?;
    for (k, id) in data.user_ids.iter().enumerate() {
        writeln!(w, "user,{k},{id}")?;
    }
    for (k, id) in data.item_ids.iter().enumerate() {
        writeln!(w, "item,{k},{id}")?;
    }
    w.flush()
}
