//! Explicit-rating datasets and the candidate-based train/test protocol.
//!
//! External user and item ids are sorted ascending before being densified to
//! 0-based indices, so re-loading the same ratings always yields the same
//! index maps (and therefore the same splits and checkpoints).

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

pub type UserIndex = usize;
pub type ItemIndex = usize;

/// Lowest and highest admissible rating.
pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 5;

/// Minimum ratings per user guaranteed by the MovieLens releases.
pub const MOVIELENS_MIN_USER_RATINGS: usize = 20;

/// Line layout of a ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RatingFormat {
    /// `u.data`: `user<TAB>item<TAB>rating<TAB>timestamp`
    TabSeparated,
    /// `ratings.dat`: `user::item::rating::timestamp`
    DoubleColon,
}

impl RatingFormat {
    fn delimiter(self) -> &'static str {
        match self {
            RatingFormat::TabSeparated => "\t",
            RatingFormat::DoubleColon => "::",
        }
    }
}

/// One logged rating. The timestamp is parsed for validation and then ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingRecord {
    pub user: u64,
    pub item: u64,
    pub rating: u8,
    pub timestamp: i64,
}

/// Parses one line; `line_no` is 1-based and only used in error messages.
pub fn parse_line(line: &str, format: RatingFormat, line_no: usize) -> Result<RatingRecord> {
    let err = |message: &str| Error::Parse { line: line_no, message: message.to_string() };
    let mut fields = line.trim_end_matches(['\r', '\n']).split(format.delimiter());
    let mut next = |name: &str| {
        fields
            .next()
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .ok_or_else(|| err(&format!("missing {name} field")))
    };
    let user = next("user")?.parse::<u64>().map_err(|_| err("user id is not an unsigned integer"))?;
    let item = next("item")?.parse::<u64>().map_err(|_| err("item id is not an unsigned integer"))?;
    let rating_field = next("rating")?;
    let timestamp = next("timestamp")?.parse::<i64>().map_err(|_| err("timestamp is not an integer"))?;
    if fields.next().is_some() {
        return Err(err("expected exactly 4 fields"));
    }
    let rating = rating_field.parse::<i64>().map_err(|_| err("rating is not an integer"))?;
    if !(i64::from(MIN_RATING)..=i64::from(MAX_RATING)).contains(&rating) {
        return Err(Error::Validation(format!(
            "line {line_no}: rating {rating} outside {MIN_RATING}..={MAX_RATING}"
        )));
    }
    Ok(RatingRecord { user, item, rating: rating as u8, timestamp })
}

/// Parses a whole ratings file. Blank lines are skipped.
pub fn parse_ratings(text: &str, format: RatingFormat) -> Result<Vec<RatingRecord>> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, format, i + 1))
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(records)
}

/// Sparse user-item rating matrix with dense 0-based indices.
///
/// Ratings are stored twice in compressed form: per user (items ascending) and
/// per item (users ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    user_ptr: Vec<usize>,
    user_items: Vec<u32>,
    user_ratings: Vec<u8>,
    item_ptr: Vec<usize>,
    item_users: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub m: usize,
    pub n: usize,
    pub rating_count: usize,
    pub mean_rating: f64,
    pub density: f64,
}

impl RatingDataset {
    /// Builds the dataset from parsed records. Rejects out-of-range ratings and
    /// duplicate (user, item) pairs.
    pub fn from_records(records: &[RatingRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        if let Some(r) = records.iter().find(|r| !(MIN_RATING..=MAX_RATING).contains(&r.rating)) {
            return Err(Error::Validation(format!(
                "rating {} for (user {}, item {}) outside {MIN_RATING}..={MAX_RATING}",
                r.rating, r.user, r.item
            )));
        }
        let mut user_ids: Vec<u64> = records.iter().map(|r| r.user).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut item_ids: Vec<u64> = records.iter().map(|r| r.item).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        if item_ids.len() > u32::MAX as usize || user_ids.len() > u32::MAX as usize {
            return Err(Error::Validation("too many users or items".to_string()));
        }

        let mut triples: Vec<(u32, u32, u8)> = records
            .iter()
            .map(|r| {
                let u = user_ids.binary_search(&r.user).unwrap_or_else(|_| unreachable!()) as u32;
                let i = item_ids.binary_search(&r.item).unwrap_or_else(|_| unreachable!()) as u32;
                (u, i, r.rating)
            })
            .collect();
        triples.sort_unstable_by_key(|&(u, i, _)| (u, i));
        if let Some(w) = triples.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::Validation(format!(
                "duplicate rating for (user {}, item {})",
                user_ids[w[0].0 as usize], item_ids[w[0].1 as usize]
            )));
        }

        let (m, n) = (user_ids.len(), item_ids.len());
        let mut user_ptr = alloc::vec![0usize; m + 1];
        for &(u, _, _) in &triples {
            user_ptr[u as usize + 1] += 1;
        }
        for u in 0..m {
            user_ptr[u + 1] += user_ptr[u];
        }
        let user_items = triples.iter().map(|t| t.1).collect();
        let user_ratings = triples.iter().map(|t| t.2).collect();

        let mut item_ptr = alloc::vec![0usize; n + 1];
        for &(_, i, _) in &triples {
            item_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            item_ptr[i + 1] += item_ptr[i];
        }
        let mut fill = item_ptr.clone();
        let mut item_users = alloc::vec![0u32; triples.len()];
        // triples are user-major, so each item's user list comes out ascending
        for &(u, i, _) in &triples {
            item_users[fill[i as usize]] = u;
            fill[i as usize] += 1;
        }

        Ok(Self { user_ids, item_ids, user_ptr, user_items, user_ratings, item_ptr, item_users })
    }

    /// Errors if any user has fewer than `min` ratings.
    pub fn check_min_user_ratings(&self, min: usize) -> Result<()> {
        match (0..self.num_users()).find(|&u| self.user_degree(u) < min) {
            Some(u) => Err(Error::Validation(format!(
                "user {} has {} ratings, fewer than the required {min}",
                self.user_ids[u],
                self.user_degree(u)
            ))),
            None => Ok(()),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_ratings(&self) -> usize {
        self.user_items.len()
    }

    pub fn user_id(&self, user: UserIndex) -> u64 {
        self.user_ids[user]
    }

    pub fn item_id(&self, item: ItemIndex) -> u64 {
        self.item_ids[item]
    }

    pub fn user_index(&self, external: u64) -> Option<UserIndex> {
        self.user_ids.binary_search(&external).ok()
    }

    pub fn item_index(&self, external: u64) -> Option<ItemIndex> {
        self.item_ids.binary_search(&external).ok()
    }

    /// Items rated by `user`, ascending.
    pub fn user_items(&self, user: UserIndex) -> &[u32] {
        &self.user_items[self.user_ptr[user]..self.user_ptr[user + 1]]
    }

    /// Ratings aligned with [`Self::user_items`].
    pub fn user_ratings(&self, user: UserIndex) -> &[u8] {
        &self.user_ratings[self.user_ptr[user]..self.user_ptr[user + 1]]
    }

    pub fn user_degree(&self, user: UserIndex) -> usize {
        self.user_ptr[user + 1] - self.user_ptr[user]
    }

    /// Users who rated `item`, ascending.
    pub fn item_users(&self, item: ItemIndex) -> &[u32] {
        &self.item_users[self.item_ptr[item]..self.item_ptr[item + 1]]
    }

    pub fn rating(&self, user: UserIndex, item: ItemIndex) -> Option<u8> {
        let items = self.user_items(user);
        items.binary_search(&(item as u32)).ok().map(|k| self.user_ratings(user)[k])
    }

    /// All ratings as (user, item, rating), user-major.
    pub fn iter(&self) -> impl Iterator<Item = (UserIndex, ItemIndex, u8)> + '_ {
        (0..self.num_users()).flat_map(move |u| {
            self.user_items(u).iter().zip(self.user_ratings(u)).map(move |(&i, &r)| (u, i as usize, r))
        })
    }

    pub fn stats(&self) -> DatasetStats {
        let count = self.num_ratings();
        let sum: u64 = self.user_ratings.iter().map(|&r| u64::from(r)).sum();
        let (m, n) = (self.num_users(), self.num_items());
        DatasetStats {
            m,
            n,
            rating_count: count,
            mean_rating: sum as f64 / count as f64,
            density: count as f64 / (m as f64 * n as f64),
        }
    }
}

/// Parameters of the candidate-based split protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SplitConfig {
    pub n_splits: usize,
    pub test_fraction: f64,
    /// Users with strictly more than this many ratings are test candidates.
    pub min_ratings: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_splits: 10, test_fraction: 0.10, min_ratings: 100 }
    }
}

/// One train/test partition of the user set. Both lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_users: Vec<UserIndex>,
    pub test_users: Vec<UserIndex>,
    pub seed: u64,
}

/// Users with strictly more than `min_ratings` ratings, ascending.
pub fn candidates(ds: &RatingDataset, min_ratings: usize) -> Vec<UserIndex> {
    (0..ds.num_users()).filter(|&u| ds.user_degree(u) > min_ratings).collect()
}

/// `ceil(fraction * count)`, robust to the representation error of products
/// such as `0.1 * 530`.
pub fn fraction_count(fraction: f64, count: usize) -> usize {
    let x = fraction * count as f64;
    let r = libm::round(x);
    if libm::fabs(x - r) < 1e-9 {
        r as usize
    } else {
        libm::ceil(x) as usize
    }
}

/// Draws `cfg.n_splits` independent splits. Split `k` samples its test users
/// uniformly without replacement from the candidates using a generator seeded
/// from `(seed, k)`.
pub fn make_splits(ds: &RatingDataset, cfg: &SplitConfig, seed: u64) -> Result<Vec<Split>> {
    if cfg.n_splits == 0 {
        return Err(Error::InvalidArgument("n_splits must be at least 1".to_string()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction {} must lie in (0, 1)",
            cfg.test_fraction
        )));
    }
    let pool = candidates(ds, cfg.min_ratings);
    if pool.is_empty() {
        return Err(Error::NoCandidates { min_ratings: cfg.min_ratings });
    }
    let k = fraction_count(cfg.test_fraction, pool.len()).min(pool.len());
    Ok((0..cfg.n_splits)
        .map(|s| {
            let split_seed = seed::derive_indexed(seed, "split", s as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            let mut test: Vec<UserIndex> =
                rand::seq::index::sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
            test.sort_unstable();
            let train = (0..ds.num_users()).filter(|u| test.binary_search(u).is_err()).collect();
            Split { train_users: train, test_users: test, seed: split_seed }
        })
        .collect())
}
