//! Ratings ingestion, train/test splitting, and participant-list
//! derivation.
//!
//! Input files use the MovieLens CSV layout
//! (`userId,movieId,rating,timestamp` with a header line). Desk-scale
//! subsets keep the most-rated items first and then the most active users
//! on those items, re-indexed densely.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::mf::{MfError, RatingMatrix};
use crate::protocol::Mode;
use crate::secure_agg::ParticipantSet;
use crate::seed::derive_rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("selection is empty (no users or items survived the limits)")]
    EmptySelection,
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ratings(#[from] MfError),
}

/// Where and how to load a ratings file.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub max_users: u32,
    pub max_items: u32,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.max_users == 0 || self.max_items == 0 {
            return Err(DataError::InvalidConfig(
                "max_users and max_items must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(DataError::InvalidConfig(format!(
                "test_fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Parses the CSV and selects the densest `max_users x max_items` corner:
/// items ranked by rating count, then users ranked by their count on the
/// selected items, both re-indexed densely in rank order.
pub fn load_ratings(cfg: &DatasetConfig) -> Result<RatingMatrix, DataError> {
    cfg.validate()?;
    let text = std::fs::read_to_string(&cfg.path).map_err(|source| DataError::Io {
        path: cfg.path.clone(),
        source,
    })?;
    let raw = parse_csv(&text)?;
    select_subset(&raw, cfg.max_users, cfg.max_items)
}

fn parse_csv(text: &str) -> Result<Vec<(u64, u64, f64)>, DataError> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == "userId,movieId,rating,timestamp" => {}
        Some((_, header)) => {
            return Err(DataError::Parse {
                line: 1,
                reason: format!("unexpected header {header:?}"),
            })
        }
        None => return Err(DataError::EmptySelection),
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields.next().ok_or(DataError::Parse {
                line: line_no,
                reason: format!("missing field {name}"),
            })
        };
        let user: u64 = parse_field(next("userId")?, line_no, "userId")?;
        let item: u64 = parse_field(next("movieId")?, line_no, "movieId")?;
        let rating: f64 = parse_field(next("rating")?, line_no, "rating")?;
        next("timestamp")?; // present but unused
        rows.push((user, item, rating));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    line: usize,
    name: &str,
) -> Result<T, DataError> {
    field.trim().parse().map_err(|_| DataError::Parse {
        line,
        reason: format!("cannot parse {name} from {field:?}"),
    })
}

fn select_subset(
    rows: &[(u64, u64, f64)],
    max_users: u32,
    max_items: u32,
) -> Result<RatingMatrix, DataError> {
    // Rank items by rating count (desc), original id breaking ties.
    let mut item_counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (_, item, _) in rows {
        *item_counts.entry(*item).or_default() += 1;
    }
    let mut items: Vec<(u64, usize)> = item_counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    items.truncate(max_items as usize);
    let item_index: BTreeMap<u64, u32> = items
        .iter()
        .enumerate()
        .map(|(rank, (id, _))| (*id, rank as u32))
        .collect();

    // Rank users by their rating count restricted to the selected items.
    let mut user_counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (user, item, _) in rows {
        if item_index.contains_key(item) {
            *user_counts.entry(*user).or_default() += 1;
        }
    }
    let mut users: Vec<(u64, usize)> = user_counts.into_iter().collect();
    users.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    users.truncate(max_users as usize);
    let user_index: BTreeMap<u64, u32> = users
        .iter()
        .enumerate()
        .map(|(rank, (id, _))| (*id, rank as u32))
        .collect();

    if user_index.is_empty() || item_index.is_empty() {
        return Err(DataError::EmptySelection);
    }

    let entries = rows.iter().filter_map(|(user, item, rating)| {
        match (user_index.get(user), item_index.get(item)) {
            (Some(&i), Some(&k)) => Some((i, k, *rating)),
            _ => None,
        }
    });
    let matrix = RatingMatrix::from_entries(
        user_index.len() as u32,
        item_index.len() as u32,
        entries,
    )?;
    if matrix.is_empty() {
        return Err(DataError::EmptySelection);
    }
    Ok(matrix)
}

/// Per-user random split. Every user with at least two ratings keeps at
/// least one training rating; single-rating users stay entirely in train.
pub fn split(
    ratings: &RatingMatrix,
    cfg: &DatasetConfig,
) -> Result<(RatingMatrix, RatingMatrix), DataError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for user in 0..ratings.users() {
        let mut owned: Vec<(u32, f64)> = ratings.user_items(user).to_vec();
        let mut rng = derive_rng(cfg.split_seed, "split/user", user as u64);
        owned.shuffle(&mut rng);
        let test_count = if owned.len() < 2 {
            0
        } else {
            (((owned.len() as f64) * cfg.test_fraction).floor() as usize).min(owned.len() - 1)
        };
        for (idx, (item, rating)) in owned.into_iter().enumerate() {
            if idx < test_count {
                test.push((user, item, rating));
            } else {
                train.push((user, item, rating));
            }
        }
    }
    let train = RatingMatrix::from_entries(ratings.users(), ratings.items(), train)?;
    let test = RatingMatrix::from_entries(ratings.users(), ratings.items(), test)?;
    Ok((train, test))
}

/// Participant sets per item: the raters in part-upload mode, everyone in
/// full-upload mode. Items with no participants are omitted (skipped for
/// the iteration).
pub fn participant_lists(
    ratings: &RatingMatrix,
    mode: Mode,
    users: u32,
) -> BTreeMap<u32, ParticipantSet> {
    let mut lists = BTreeMap::new();
    for item in 0..ratings.items() {
        let members = match mode {
            Mode::FullText => (0..users).collect(),
            _ => ratings.raters(item).to_vec(),
        };
        if members.is_empty() {
            continue;
        }
        lists.insert(
            item,
            ParticipantSet::new(members).expect("rater lists are sorted and unique"),
        );
    }
    lists
}

/// Writes a synthetic ratings file in MovieLens CSV format: a low-rank
/// preference structure plus noise, snapped to the half-star scale, with
/// roughly `density` of all (user, item) pairs rated.
pub fn write_synthetic_ratings(
    path: &Path,
    users: u32,
    items: u32,
    density: f64,
    seed: u64,
) -> std::io::Result<()> {
    let latent = 4usize;
    let mut rng = derive_rng(seed, "synthetic/ratings", 0);
    let user_factors: Vec<Vec<f64>> = (0..users)
        .map(|_| (0..latent).map(|_| rng.random::<f64>()).collect())
        .collect();
    let item_factors: Vec<Vec<f64>> = (0..items)
        .map(|_| (0..latent).map(|_| rng.random::<f64>()).collect())
        .collect();
    // Heavier raters first so that top-k selection mirrors the original
    // dataset's skew.
    let user_activity: Vec<f64> = (0..users)
        .map(|u| 0.4 + 1.2 * (1.0 - u as f64 / users as f64))
        .collect();
    let item_popularity: Vec<f64> = (0..items)
        .map(|k| 0.4 + 1.2 * (1.0 - k as f64 / items as f64))
        .collect();

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "userId,movieId,rating,timestamp")?;
    let mut timestamp = 964_982_703u64;
    for u in 0..users {
        for k in 0..items {
            let p = density * user_activity[u as usize] * item_popularity[k as usize];
            if rng.random::<f64>() >= p {
                continue;
            }
            let dot: f64 = user_factors[u as usize]
                .iter()
                .zip(&item_factors[k as usize])
                .map(|(a, b)| a * b)
                .sum();
            let noisy = 0.5 + 4.5 * dot / latent as f64 + 0.35 * (rng.random::<f64>() - 0.5);
            let snapped = (noisy * 2.0).round().clamp(1.0, 10.0) / 2.0;
            timestamp += 37;
            writeln!(file, "{},{},{:.1},{}", u + 1, k + 1, snapped, timestamp)?;
        }
    }
    file.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn cfg(path: &Path, max_users: u32, max_items: u32) -> DatasetConfig {
        DatasetConfig {
            path: path.to_path_buf(),
            max_users,
            max_items,
            test_fraction: 0.2,
            split_seed: 5,
        }
    }

    #[test]
    fn toy_file_builds_expected_matrix() {
        let f = write_temp(
            "userId,movieId,rating,timestamp\n1,10,4.0,111\n1,20,3.5,112\n2,10,5.0,113\n",
        );
        let r = load_ratings(&cfg(f.path(), 2, 2)).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.users(), 2);
        assert_eq!(r.items(), 2);
        // item 10 has two raters and ranks first.
        assert_eq!(r.rater_count(0), 2);
        assert_eq!(r.rater_count(1), 1);
        // user 1 rated both items and ranks first.
        assert_eq!(r.user_items(0).len(), 2);
        assert_eq!(r.rating(0, 0), Some(4.0));
        assert_eq!(r.rating(1, 0), Some(5.0));
    }

    #[test]
    fn header_only_file_is_empty_selection() {
        let f = write_temp("userId,movieId,rating,timestamp\n");
        assert!(matches!(
            load_ratings(&cfg(f.path(), 2, 2)),
            Err(DataError::EmptySelection)
        ));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let f = write_temp("userId,movieId,rating,timestamp\n1,10,4.0,111\n1,oops,3.0,112\n");
        match load_ratings(&cfg(f.path(), 2, 2)) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn selection_keeps_top_rated_items_first() {
        // item 30 has 3 ratings, 10 has 2, 20 has 1; cap at 2 items.
        let f = write_temp(
            "userId,movieId,rating,timestamp\n\
             1,30,1.0,1\n2,30,2.0,2\n3,30,3.0,3\n\
             1,10,4.0,4\n2,10,4.5,5\n\
             3,20,5.0,6\n",
        );
        let r = load_ratings(&cfg(f.path(), 3, 2)).unwrap();
        assert_eq!(r.items(), 2);
        assert_eq!(r.rater_count(0), 3); // original item 30
        assert_eq!(r.rater_count(1), 2); // original item 10
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let entries: Vec<(u32, u32, f64)> = (0..6u32)
            .flat_map(|u| (0..5u32).map(move |k| (u, k, ((u + k) % 5) as f64 + 0.5)))
            .collect();
        let r = RatingMatrix::from_entries(6, 5, entries).unwrap();
        let c = DatasetConfig {
            path: PathBuf::new(),
            max_users: 6,
            max_items: 5,
            test_fraction: 0.4,
            split_seed: 11,
        };
        let (train, test) = split(&r, &c).unwrap();
        assert_eq!(train.len() + test.len(), r.len());
        for (i, k, v) in train.iter_entries() {
            assert_eq!(r.rating(i, k), Some(v));
            assert_eq!(test.rating(i, k), None);
        }
        for user in 0..6 {
            assert!(!train.user_items(user).is_empty());
        }
        let (train2, test2) = split(&r, &c).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        let zero = DatasetConfig {
            test_fraction: 0.0,
            ..c
        };
        let (all_train, empty_test) = split(&r, &zero).unwrap();
        assert_eq!(all_train.len(), r.len());
        assert!(empty_test.is_empty());
    }

    #[test]
    fn participant_list_modes() {
        let r =
            RatingMatrix::from_entries(5, 3, [(1, 0, 1.0), (4, 0, 2.0), (2, 1, 3.0)]).unwrap();
        let part = participant_lists(&r, Mode::PartText, 5);
        assert_eq!(part[&0].members(), &[1, 4]);
        assert_eq!(part[&1].members(), &[2]);
        assert!(!part.contains_key(&2), "unrated item is skipped");

        let full = participant_lists(&r, Mode::FullText, 5);
        assert_eq!(full[&2].members(), &[0, 1, 2, 3, 4]);
        for (item, set) in &part {
            assert!(full[item]
                .members()
                .iter()
                .collect::<std::collections::BTreeSet<_>>()
                .is_superset(&set.members().iter().collect()));
        }
    }

    #[test]
    fn rater_lists_match_recomputed_counts() {
        let f = write_temp(
            "userId,movieId,rating,timestamp\n\
             1,1,1.0,1\n1,2,2.0,2\n2,1,3.0,3\n3,2,4.0,4\n3,3,0.5,5\n",
        );
        let r = load_ratings(&cfg(f.path(), 3, 3)).unwrap();
        let total: u32 = (0..r.items()).map(|k| r.rater_count(k)).sum();
        assert_eq!(total as usize, r.len());
        for k in 0..r.items() {
            let recomputed: Vec<u32> = (0..r.users())
                .filter(|&i| r.rating(i, k).is_some())
                .collect();
            assert_eq!(r.raters(k), &recomputed[..]);
        }
    }

    #[test]
    fn synthetic_file_loads_and_has_requested_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic.csv");
        write_synthetic_ratings(&path, 30, 20, 0.3, 99).unwrap();
        let r = load_ratings(&cfg(&path, 30, 20)).unwrap();
        assert!(r.users() <= 30);
        assert!(r.items() <= 20);
        assert!(r.len() > 50, "density too low: {}", r.len());
        for (_, _, rating) in r.iter_entries() {
            assert!((0.5..=5.0).contains(&rating));
            assert_eq!((rating * 2.0).fract(), 0.0, "half-star scale");
        }
        // Determinism.
        let path2 = dir.path().join("synthetic2.csv");
        write_synthetic_ratings(&path2, 30, 20, 0.3, 99).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }
}
