//! User/tweet ingestion, participation classification, and mock-engager
//! construction.
//!
//! Users are split into lurkers, engagers, and contributors by their average
//! number of posts per day. Contributors are additionally thinned into "mock
//! engagers": their tweets are removed at random, day by day, until the
//! posting rate drops to engager level, while the contributor's full activity
//! vector is kept as ground-truth exposure for evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type UserId = String;

/// Participation role, decided by activities-per-day thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Lurker,
    Engager,
    Contributor,
    MockEngager,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Lurker => "lurker",
            Role::Engager => "engager",
            Role::Contributor => "contributor",
            Role::MockEngager => "mock_engager",
        };
        f.write_str(s)
    }
}

/// Activities-per-day cutoffs separating lurkers, engagers, and contributors.
///
/// Lurker iff rate < `lurker_max`; engager iff `lurker_max` <= rate <=
/// `engager_max` (upper bound inclusive); contributor otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticipationThresholds {
    pub lurker_max: f64,
    pub engager_max: f64,
}

impl Default for ParticipationThresholds {
    fn default() -> Self {
        Self {
            lurker_max: 0.005,
            engager_max: 0.1,
        }
    }
}

impl ParticipationThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lurker_max >= 0.0 && self.lurker_max < self.engager_max) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 <= lurker_max < engager_max, got {} and {}",
                self.lurker_max, self.engager_max
            )));
        }
        Ok(())
    }
}

/// One post. `day` counts from the corpus epoch (day 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub user_id: UserId,
    pub day: u32,
    pub text: String,
    /// Pre-tokenized content; required when `text` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
}

/// Profile fields as they appear in `users.jsonl` (no derived activity data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub verified: bool,
    pub is_org: bool,
    pub registered_days: u32,
    pub followers: u64,
    pub friends: u64,
}

/// A profile joined with activity statistics and the resulting role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub role: Role,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub verified: bool,
    pub is_org: bool,
    pub registered_days: u32,
    pub followers: u64,
    pub friends: u64,
    /// Days in the user's observation window (last posting day + 1, counted
    /// from the corpus epoch); 1 for users who never posted.
    pub observed_days: u32,
    pub tweet_count: u32,
}

impl UserRecord {
    pub fn profile(&self) -> UserProfile {
        UserProfile {
            user_id: self.user_id.clone(),
            age: self.age,
            gender: self.gender.clone(),
            verified: self.verified,
            is_org: self.is_org,
            registered_days: self.registered_days,
            followers: self.followers,
            friends: self.friends,
        }
    }

    pub fn rate(&self) -> f64 {
        f64::from(self.tweet_count) / f64::from(self.observed_days.max(1))
    }
}

/// A thinned contributor plus the ground truth its estimates are scored
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEngagerPair {
    pub mock_user: UserRecord,
    pub retained_tweets: Vec<TweetRecord>,
    pub source_contributor_id: UserId,
    /// The source contributor's full binary activity vector (length t).
    pub ground_truth_activity: Vec<u8>,
}

/// Input to [`make_mock_engagers`]: one contributor, their tweets, and their
/// full activity vector over the topic vocabulary.
#[derive(Debug, Clone)]
pub struct ContributorRecords {
    pub user: UserRecord,
    pub tweets: Vec<TweetRecord>,
    pub activity: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

// Raw mirror of the users.jsonl schema; numerics are signed so range errors
// surface as validation errors rather than serde failures.
#[derive(Deserialize)]
struct RawUser {
    user_id: String,
    age: Option<i64>,
    gender: Option<String>,
    verified: bool,
    is_org: bool,
    registered_days: i64,
    followers: i64,
    friends: i64,
}

#[derive(Deserialize)]
struct RawTweet {
    tweet_id: String,
    user_id: String,
    day: i64,
    text: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
}

fn nonneg(subject: &str, field: &str, v: i64) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::validation(subject, format!("{field}: {v} is negative")))
}

/// Read `users.jsonl`. Duplicate user ids are rejected; optional fields stay
/// explicit `None` ("unknown") rather than being imputed.
pub fn ingest_users(path: &Path) -> Result<Vec<UserProfile>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut seen: BTreeSet<UserId> = BTreeSet::new();
    let mut users = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawUser = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let subject = format!("user {}", raw.user_id);
        if raw.user_id.is_empty() {
            return Err(Error::validation(
                format!("{path:?} line {}", idx + 1),
                "user_id is empty",
            ));
        }
        if !seen.insert(raw.user_id.clone()) {
            return Err(Error::DuplicateUser {
                user_id: raw.user_id,
            });
        }
        let age = match raw.age {
            Some(a) => Some(u32::try_from(a).map_err(|_| {
                Error::validation(&subject, format!("age: {a} is negative"))
            })?),
            None => None,
        };
        users.push(UserProfile {
            age,
            gender: raw.gender,
            verified: raw.verified,
            is_org: raw.is_org,
            registered_days: nonneg(&subject, "registered_days", raw.registered_days)? as u32,
            followers: nonneg(&subject, "followers", raw.followers)?,
            friends: nonneg(&subject, "friends", raw.friends)?,
            user_id: raw.user_id,
        });
    }
    Ok(users)
}

/// Result of [`ingest_tweets`]; `skipped` lists tweets dropped in lenient
/// mode because their user id is unknown.
#[derive(Debug, Clone)]
pub struct TweetIngest {
    pub tweets: Vec<TweetRecord>,
    pub skipped: Vec<String>,
}

/// Read `tweets.jsonl`, preserving input order. A tweet whose `user_id` is
/// not in `known_users` is an error in strict mode and skipped otherwise.
pub fn ingest_tweets(
    path: &Path,
    known_users: &BTreeSet<UserId>,
    strict: bool,
) -> Result<TweetIngest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut tweets = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTweet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let subject = format!("tweet {}", raw.tweet_id);
        if raw.user_id.is_empty() {
            return Err(Error::validation(&subject, "user_id is empty"));
        }
        if raw.day < 0 {
            return Err(Error::validation(
                &subject,
                format!("day: {} is negative", raw.day),
            ));
        }
        if raw.text.is_empty() && raw.tokens.is_none() {
            return Err(Error::validation(
                &subject,
                "text is empty and no token list is supplied",
            ));
        }
        if !known_users.contains(&raw.user_id) {
            if strict {
                return Err(Error::DanglingTweet {
                    tweet_id: raw.tweet_id,
                    user_id: raw.user_id,
                });
            }
            skipped.push(raw.tweet_id);
            continue;
        }
        tweets.push(TweetRecord {
            tweet_id: raw.tweet_id,
            user_id: raw.user_id,
            day: raw.day as u32,
            text: raw.text,
            tokens: raw.tokens,
        });
    }
    Ok(TweetIngest { tweets, skipped })
}

pub fn write_users_jsonl(path: &Path, users: &[UserProfile]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for u in users {
        let line = serde_json::to_string(u).expect("user serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_tweets_jsonl(path: &Path, tweets: &[TweetRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in tweets {
        let line = serde_json::to_string(t).expect("tweet serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Map an activity rate to a role. Total over all valid inputs.
///
/// rate = tweet_count / observed_days; lurker iff rate < lurker_max,
/// engager iff rate <= engager_max (both bounds inclusive on the engager
/// side), contributor otherwise.
pub fn classify_participation(
    tweet_count: u32,
    observed_days: u32,
    th: &ParticipationThresholds,
) -> Role {
    assert!(observed_days >= 1, "observed_days must be >= 1");
    let rate = f64::from(tweet_count) / f64::from(observed_days);
    if rate < th.lurker_max {
        Role::Lurker
    } else if rate <= th.engager_max {
        Role::Engager
    } else {
        Role::Contributor
    }
}

/// Group tweets per user id, preserving each user's input order.
pub fn tweets_by_user(tweets: &[TweetRecord]) -> BTreeMap<UserId, Vec<TweetRecord>> {
    let mut map: BTreeMap<UserId, Vec<TweetRecord>> = BTreeMap::new();
    for t in tweets {
        map.entry(t.user_id.clone()).or_default().push(t.clone());
    }
    map
}

/// Join profiles with tweets: derive each user's observation window, tweet
/// count, and role. Profile order is preserved.
pub fn assemble_users(
    profiles: &[UserProfile],
    tweets: &[TweetRecord],
    th: &ParticipationThresholds,
) -> Result<Vec<UserRecord>> {
    th.validate()?;
    let mut stats: BTreeMap<&str, (u32, u32)> = BTreeMap::new(); // (count, max_day)
    for t in tweets {
        let e = stats.entry(t.user_id.as_str()).or_insert((0, 0));
        e.0 += 1;
        e.1 = e.1.max(t.day);
    }
    let mut out = Vec::with_capacity(profiles.len());
    for p in profiles {
        let (tweet_count, observed_days) = match stats.get(p.user_id.as_str()) {
            Some(&(count, max_day)) => (count, max_day + 1),
            None => (0, 1),
        };
        let role = classify_participation(tweet_count, observed_days, th);
        out.push(UserRecord {
            user_id: p.user_id.clone(),
            role,
            age: p.age,
            gender: p.gender.clone(),
            verified: p.verified,
            is_org: p.is_org,
            registered_days: p.registered_days,
            followers: p.followers,
            friends: p.friends,
            observed_days,
            tweet_count,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mock engagers
// ---------------------------------------------------------------------------

/// Seed a per-user RNG stream from the run seed and the user id, so mock
/// construction is deterministic regardless of processing order.
fn user_rng(seed: u64, user_id: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(user_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

pub fn mock_user_id(source: &str) -> UserId {
    format!("{source}__mock")
}

/// Thin each contributor's tweets until their rate is at or below
/// `engager_max`, keeping the full activity vector as ground truth.
///
/// Within each pass, days (with tweets remaining) are visited in random
/// order and one uniformly chosen tweet is removed per visited day, so
/// removal stays spread across the window.
pub fn make_mock_engagers(
    contributors: &[ContributorRecords],
    th: &ParticipationThresholds,
    seed: u64,
) -> Result<Vec<MockEngagerPair>> {
    th.validate()?;
    let mut pairs = Vec::with_capacity(contributors.len());
    for c in contributors {
        if c.user.role != Role::Contributor {
            return Err(Error::validation(
                format!("user {}", c.user.user_id),
                format!("mock construction expects contributors, found {}", c.user.role),
            ));
        }
        if c.tweets.is_empty() {
            return Err(Error::validation(
                format!("user {}", c.user.user_id),
                "contributor has no tweets",
            ));
        }
        let mut rng = user_rng(seed, &c.user.user_id);
        let observed = f64::from(c.user.observed_days);
        let mut by_day: BTreeMap<u32, Vec<&TweetRecord>> = BTreeMap::new();
        for t in &c.tweets {
            by_day.entry(t.day).or_default().push(t);
        }
        let mut remaining = c.tweets.len();
        while remaining as f64 / observed > th.engager_max {
            let mut days: Vec<u32> = by_day
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(d, _)| *d)
                .collect();
            days.shuffle(&mut rng);
            for day in days {
                let slot = by_day.get_mut(&day).expect("day exists");
                let victim = rng.random_range(0..slot.len());
                slot.remove(victim);
                remaining -= 1;
                if remaining as f64 / observed <= th.engager_max {
                    break;
                }
            }
        }
        let retained_ids: BTreeSet<&str> = by_day
            .values()
            .flat_map(|v| v.iter().map(|t| t.tweet_id.as_str()))
            .collect();
        let mock_id = mock_user_id(&c.user.user_id);
        let retained_tweets: Vec<TweetRecord> = c
            .tweets
            .iter()
            .filter(|t| retained_ids.contains(t.tweet_id.as_str()))
            .map(|t| TweetRecord {
                user_id: mock_id.clone(),
                ..t.clone()
            })
            .collect();
        let mock_user = UserRecord {
            user_id: mock_id,
            role: Role::MockEngager,
            tweet_count: retained_tweets.len() as u32,
            // The thinned user is observed over the same window as its source.
            observed_days: c.user.observed_days,
            ..c.user.clone()
        };
        pairs.push(MockEngagerPair {
            mock_user,
            retained_tweets,
            source_contributor_id: c.user.user_id.clone(),
            ground_truth_activity: c.activity.clone(),
        });
    }
    Ok(pairs)
}

/// Write `user_id,tweet_count,observed_days,rate,role` rows.
pub fn write_roles_csv(path: &Path, users: &[UserRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "user_id,tweet_count,observed_days,rate,role").map_err(|e| Error::io(path, e))?;
    for u in users {
        writeln!(
            w,
            "{},{},{},{},{}",
            u.user_id,
            u.tweet_count,
            u.observed_days,
            u.rate(),
            u.role
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
