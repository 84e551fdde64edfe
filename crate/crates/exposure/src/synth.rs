//! Synthetic corpus generation with planted exposure ground truth.
//!
//! The generator plants one pseudo-word term per topic, decides which users
//! saw which topics (the exposure truth), and emits tweets only for the
//! topics a user both saw and engaged with. That makes exposure strictly a
//! superset of activity, with the gap controlled by per-role engagement
//! probabilities. Two levers tie exposure to the profile so that
//! profile-aware estimators have real signal to find:
//!
//! * nine communities (gender x age band) each boost a ninth of the topics,
//! * a follower-count coupling widens or narrows how many topics a user sees.

use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Pareto};
use serde::{Deserialize, Serialize};

use crate::corpus::{ParticipationThresholds, TweetRecord, UserProfile};
use crate::error::{Error, Result};
use crate::matrices::{write_matrix_csv, UserMatrix};
use crate::topics::is_stopword;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Knobs for the synthetic corpus. Role order everywhere is
/// `[lurker, engager, contributor]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Fractions of users per role; must sum to 1.
    pub role_mix: [f64; 3],
    pub t_topics: usize,
    /// Topic popularity decays as rank^-exponent.
    pub zipf_exponent: f64,
    /// Target mean of the exposure matrix (fraction of user-topic pairs seen).
    pub exposure_density: f64,
    /// Per-role probability that an exposed topic is engaged (tweeted about).
    pub engage_prob: [f64; 3],
    /// Tail index for the follower-count distribution.
    pub follower_pareto_alpha: f64,
    /// Length of every user's observation window, in days.
    pub observed_days: u32,
    /// Strength of the follower-count effect on exposure breadth (0 = none).
    pub profile_coupling: f64,
    /// Exposure multiplier for the topics backed by a user's community.
    pub community_boost: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            role_mix: [0.90, 0.09, 0.01],
            t_topics: 100,
            zipf_exponent: 1.1,
            exposure_density: 0.12,
            engage_prob: [0.0, 0.25, 0.85],
            follower_pareto_alpha: 1.2,
            observed_days: 120,
            profile_coupling: 0.8,
            community_boost: 2.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The standard estimator-comparison corpus (see `configs/benchmark.toml`
    /// for the same world as a pipeline config).
    ///
    /// Contributor-heavy like the public fake-news sharing corpora this
    /// mirrors: dense exposure rows for contributors (every exposed topic is
    /// tweeted about, so their activity is exactly their exposure), a large
    /// matched pool, and a short observation window so each mock engager
    /// reveals only a small fraction of its source's row.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_users: 20_000,
            role_mix: [0.55, 0.25, 0.20],
            t_topics: 60,
            exposure_density: 0.60,
            engage_prob: [0.0, 0.25, 1.0],
            follower_pareto_alpha: 0.6,
            observed_days: 40,
            profile_coupling: 2.0,
            community_boost: 2.0,
            seed,
            ..Self::default()
        }
    }
}

/// No single user-topic exposure probability may exceed this, so every
/// exposure row keeps some randomness.
const MAX_EXPOSURE_PROB: f64 = 0.97;

/// Floor on topic popularity, as a fraction of the uniform share. Keeps the
/// rarest topics from starving: every topic needs engaged users, or its term
/// can never be recovered from text.
const MIN_POPULARITY_SHARE: f64 = 0.3;

/// Every posting user gets at least this many tweets so that no document is
/// a single tweet (tiny documents let common filler words spike in tf-idf).
const MIN_TWEETS: u32 = 4;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be positive".into()));
        }
        let mix_sum: f64 = self.role_mix.iter().sum();
        if self.role_mix.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (mix_sum - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "role_mix must be nonnegative and sum to 1, got {:?}",
                self.role_mix
            )));
        }
        if self.t_topics == 0 {
            return Err(Error::Config("t_topics must be positive".into()));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config(format!(
                "zipf_exponent must be positive, got {}",
                self.zipf_exponent
            )));
        }
        if !(self.exposure_density > 0.0 && self.exposure_density <= MAX_EXPOSURE_PROB) {
            return Err(Error::Config(format!(
                "exposure_density must be in (0, {MAX_EXPOSURE_PROB}], got {}",
                self.exposure_density
            )));
        }
        if self.engage_prob.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config(format!(
                "engage_prob entries must be in [0, 1], got {:?}",
                self.engage_prob
            )));
        }
        if !(self.follower_pareto_alpha > 0.0 && self.follower_pareto_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "follower_pareto_alpha must be positive, got {}",
                self.follower_pareto_alpha
            )));
        }
        let th = ParticipationThresholds::default();
        let engager_cap = (th.engager_max * f64::from(self.observed_days)).floor() as u32;
        if engager_cap < MIN_TWEETS {
            return Err(Error::Config(format!(
                "observed_days {} is too short: engagers need room for at \
                 least {MIN_TWEETS} tweets below the contributor rate",
                self.observed_days
            )));
        }
        if !(self.profile_coupling >= 0.0 && self.profile_coupling.is_finite()) {
            return Err(Error::Config(format!(
                "profile_coupling must be nonnegative, got {}",
                self.profile_coupling
            )));
        }
        if !(self.community_boost > 0.0 && self.community_boost.is_finite()) {
            return Err(Error::Config(format!(
                "community_boost must be positive, got {}",
                self.community_boost
            )));
        }
        let counts = role_counts(self.n_users, &self.role_mix);
        for (i, (&count, &mix)) in counts.iter().zip(&self.role_mix).enumerate() {
            if mix > 0.0 && count == 0 {
                let role = ["lurker", "engager", "contributor"][i];
                return Err(Error::Config(format!(
                    "{role} share {mix} rounds to zero users out of {}; \
                     raise n_users or the share",
                    self.n_users
                )));
            }
        }
        Ok(())
    }
}

/// Apportion `n` users across roles by largest remainder, so counts always
/// sum to `n` exactly.
fn role_counts(n: usize, mix: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = mix.iter().map(|p| p * n as f64).collect();
    let mut counts = [0usize; 3];
    let mut assigned = 0;
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
        assigned += *c;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Word material
// ---------------------------------------------------------------------------

/// Background words mixed into every tweet; none are stopwords and none can
/// collide with the consonant-vowel topic terms (these contain consonant
/// clusters or are too short).
const FILLER_POOL: [&str; 60] = [
    "morning", "coffee", "weekend", "project", "update", "thread", "photo",
    "video", "music", "album", "season", "episode", "launch", "event",
    "ticket", "travel", "flight", "hotel", "dinner", "recipe", "garden",
    "winter", "summer", "spring", "autumn", "office", "meeting", "deadline",
    "review", "report", "market", "stock", "price", "deal", "store", "order",
    "package", "street", "city", "river", "mountain", "beach", "forest",
    "training", "match", "score", "league", "team", "coach", "player",
    "friend", "family", "birthday", "holiday", "weather", "storm", "sunny",
    "cloudy", "windy", "quiet",
];

const CONSONANTS: [char; 14] = [
    'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z',
];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

/// Pronounceable pseudo-words (three consonant-vowel syllables) that cannot
/// collide with real English filler or stopword tokens.
fn make_topic_terms(n: usize, rng: &mut ChaCha20Rng) -> Vec<String> {
    let mut terms = Vec::with_capacity(n);
    let mut seen = std::collections::BTreeSet::new();
    while terms.len() < n {
        let mut term = String::with_capacity(6);
        for _ in 0..3 {
            term.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
            term.push(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if is_stopword(&term) || FILLER_POOL.contains(&term.as_str()) {
            continue;
        }
        if seen.insert(term.clone()) {
            terms.push(term);
        }
    }
    terms
}

// ---------------------------------------------------------------------------
// Exposure model
// ---------------------------------------------------------------------------

/// Per-topic popularity: Zipf weights with a floor, normalized to mean 1.
fn topic_popularity(t: usize, exponent: f64) -> Vec<f64> {
    let floor = MIN_POPULARITY_SHARE / t as f64;
    let mut pop: Vec<f64> = (0..t)
        .map(|j| ((j + 1) as f64).powf(-exponent).max(floor))
        .collect();
    let mean = pop.iter().sum::<f64>() / t as f64;
    for p in &mut pop {
        *p /= mean;
    }
    pop
}

const N_COMMUNITIES: usize = 9;

/// Mean of `min(scale * m, cap)` over all user-topic multipliers.
fn clamped_mean(multipliers: &[f64], pop: &[f64], boosts: &[Vec<f64>], scale: f64) -> f64 {
    let mut total = 0.0;
    for (w, boost) in multipliers.iter().zip(boosts) {
        for (p, b) in pop.iter().zip(boost) {
            total += (scale * w * p * b).min(MAX_EXPOSURE_PROB);
        }
    }
    total / (multipliers.len() * pop.len()) as f64
}

/// Scale factor that makes the mean exposure probability hit the target
/// density, found by bisection (the clamped mean is monotone in the scale).
fn density_scale(multipliers: &[f64], pop: &[f64], boosts: &[Vec<f64>], target: f64) -> f64 {
    let mut hi = 1.0;
    while clamped_mean(multipliers, pop, boosts, hi) < target {
        hi *= 2.0;
        assert!(hi < 1e12, "exposure density {target} is unreachable");
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if clamped_mean(multipliers, pop, boosts, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// A generated corpus plus the exposure truth behind it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub profiles: Vec<UserProfile>,
    pub tweets: Vec<TweetRecord>,
    pub topic_terms: Vec<String>,
    /// Binary matrix over all users (including lurkers) x topic terms.
    pub exposure: UserMatrix,
}

struct UserDraw {
    profile: UserProfile,
    community: usize,
    width: f64,
}

/// Age bands that pair with gender to form the nine communities.
const AGE_BANDS: [(u32, u32); 3] = [(13, 30), (31, 50), (51, 90)];
const GENDERS: [&str; 3] = ["female", "male", "nonbinary"];

fn draw_user(idx: usize, config: &SynthConfig, rng: &mut ChaCha20Rng) -> UserDraw {
    let gender_idx = rng.random_range(0..GENDERS.len());
    let band_idx = rng.random_range(0..AGE_BANDS.len());
    let (lo, hi) = AGE_BANDS[band_idx];
    let age = rng.random_range(lo..=hi);

    let alpha = config.follower_pareto_alpha;
    let followers_scale = 10.0;
    let pareto = Pareto::new(followers_scale, alpha).expect("valid follower tail");
    let followers_raw: f64 = pareto.sample(rng);
    let followers = followers_raw.round().min(1e8) as u64;
    // ln(X / scale) for a Pareto is exponential with rate alpha, so this is a
    // standardized (mean 0, variance 1) transform of the follower count.
    let z = alpha * (followers_raw / followers_scale).ln() - 1.0;
    let width = (config.profile_coupling * z).exp().clamp(0.25, 4.0);

    let friends_raw: f64 = Pareto::new(5.0, 1.5).expect("valid friend tail").sample(rng);
    let profile = UserProfile {
        user_id: format!("u{idx:06}"),
        age: Some(age),
        gender: Some(GENDERS[gender_idx].to_string()),
        verified: rng.random::<f64>() < 0.05,
        is_org: rng.random::<f64>() < 0.02,
        registered_days: rng.random_range(0..=3000),
        followers,
        friends: friends_raw.round().min(1e6) as u64,
    };
    UserDraw {
        profile,
        community: gender_idx * AGE_BANDS.len() + band_idx,
        width,
    }
}

/// How many tweets a user posts, given their role. Bounds come from the
/// participation thresholds so classification recovers the planned roles.
fn tweet_count(
    role_idx: usize,
    engaged: usize,
    days: u32,
    th: &ParticipationThresholds,
    rng: &mut ChaCha20Rng,
) -> u32 {
    let engager_cap = (th.engager_max * f64::from(days)).floor() as u32;
    match role_idx {
        0 => 0,
        1 => rng.random_range(MIN_TWEETS..=engager_cap),
        _ => {
            let lo = engager_cap + 1;
            let rate = rng.random_range(0.15..0.6);
            let target = (rate * f64::from(days)).round() as u32;
            target.max(lo).max(engaged as u32)
        }
    }
}

fn render_tweet(
    planted: Option<&str>,
    rng: &mut ChaCha20Rng,
) -> String {
    let n_fillers = rng.random_range(4..=7);
    let mut words: Vec<String> = sample_indices(rng, FILLER_POOL.len(), n_fillers)
        .iter()
        .map(|i| FILLER_POOL[i].to_string())
        .collect();
    if let Some(term) = planted {
        let rendered = if rng.random::<f64>() < 0.08 {
            format!("#{term}")
        } else {
            term.to_string()
        };
        let slot = rng.random_range(0..=words.len());
        words.insert(slot, rendered);
        // topical tweets often tag their subject, repeating the term
        if rng.random::<f64>() < 0.35 {
            words.push(format!("#{term}"));
        }
    }
    if rng.random::<f64>() < 0.05 {
        words.insert(0, format!("@user{}", rng.random_range(0..1000)));
    }
    if rng.random::<f64>() < 0.05 {
        words.push(format!("https://t.co/{:06x}", rng.random_range(0..0xff_ffffu32)));
    }
    words.join(" ")
}

/// Generate profiles, tweets, and the exposure truth.
///
/// Every posting user's final tweet lands on the last observed day, so the
/// derived observation window matches `observed_days` exactly and the
/// planned role mix survives classification.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let th = ParticipationThresholds::default();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let counts = role_counts(config.n_users, &config.role_mix);

    let topic_terms = make_topic_terms(config.t_topics, &mut rng);
    let pop = topic_popularity(config.t_topics, config.zipf_exponent);

    // Role slots shuffled across user indices so roles mix with communities.
    let mut roles: Vec<usize> = Vec::with_capacity(config.n_users);
    for (role_idx, &c) in counts.iter().enumerate() {
        roles.extend(std::iter::repeat_n(role_idx, c));
    }
    roles.shuffle(&mut rng);

    let draws: Vec<UserDraw> = (0..config.n_users)
        .map(|i| draw_user(i, config, &mut rng))
        .collect();

    // Exposure probabilities: popularity x community boost x follower width,
    // scaled so the clamped mean hits the requested density.
    let community_boosts: Vec<Vec<f64>> = (0..N_COMMUNITIES)
        .map(|c| {
            (0..config.t_topics)
                .map(|j| if j % N_COMMUNITIES == c { config.community_boost } else { 1.0 })
                .collect()
        })
        .collect();
    let widths: Vec<f64> = draws.iter().map(|d| d.width).collect();
    let boosts: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| community_boosts[d.community].clone())
        .collect();
    let scale = density_scale(&widths, &pop, &boosts, config.exposure_density);

    let mut exposure = Array2::<f64>::zeros((config.n_users, config.t_topics));
    let mut tweets: Vec<TweetRecord> = Vec::new();
    let mut profiles: Vec<UserProfile> = Vec::with_capacity(config.n_users);

    for (u, draw) in draws.iter().enumerate() {
        let role_idx = roles[u];
        let engage_p = config.engage_prob[role_idx];
        let mut engaged: Vec<usize> = Vec::new();
        for j in 0..config.t_topics {
            let p = (scale * draw.width * pop[j] * boosts[u][j]).min(MAX_EXPOSURE_PROB);
            if rng.random::<f64>() < p {
                exposure[[u, j]] = 1.0;
                if role_idx > 0 && rng.random::<f64>() < engage_p {
                    engaged.push(j);
                }
            }
        }

        let mut count = tweet_count(role_idx, engaged.len(), config.observed_days, &th, &mut rng);
        // Engagers cannot exceed their rate cap, so they drop engagement on
        // topics they have no room to tweet about.
        if engaged.len() > count as usize {
            engaged.shuffle(&mut rng);
            engaged.truncate(count as usize);
            engaged.sort_unstable();
        }
        if role_idx == 0 {
            count = 0;
        }

        for k in 0..count {
            let planted = if engaged.is_empty() {
                None
            } else {
                Some(topic_terms[engaged[k as usize % engaged.len()]].as_str())
            };
            let day = if k == 0 {
                config.observed_days - 1
            } else {
                rng.random_range(0..config.observed_days)
            };
            tweets.push(TweetRecord {
                tweet_id: format!("s{u:06}_{k}"),
                user_id: draw.profile.user_id.clone(),
                day,
                text: render_tweet(planted, &mut rng),
                tokens: None,
            });
        }
        profiles.push(draw.profile.clone());
    }

    let exposure = UserMatrix::new(
        profiles.iter().map(|p| p.user_id.clone()).collect(),
        topic_terms.clone(),
        exposure,
    )?;
    Ok(SynthOutput {
        profiles,
        tweets,
        topic_terms,
        exposure,
    })
}

/// Write `users.jsonl`, `tweets.jsonl`, and `exposure_truth.csv` into `dir`.
pub fn write_output(out: &SynthOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::corpus::write_users_jsonl(&dir.join("users.jsonl"), &out.profiles)?;
    crate::corpus::write_tweets_jsonl(&dir.join("tweets.jsonl"), &out.tweets)?;
    write_matrix_csv(&dir.join("exposure_truth.csv"), &out.exposure)
}
