//! Seeded synthetic rating corpora with a long-tailed item popularity curve
//! and users ranging from mainstream to niche. Used for tests and demos.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    /// Smallest and largest profile length.
    pub profile: (usize, usize),
    /// Zipf exponent of item attractiveness.
    pub zipf: f64,
    /// Number of latent taste clusters.
    pub genres: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 300,
            items: 400,
            profile: (20, 80),
            zipf: 1.0,
            genres: 6,
            seed: 7,
        }
    }
}

/// One generated interaction; `strength` is a positive preference signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
    pub strength: f64,
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 0.6).expect("valid normal");
    let genre: Vec<usize> = (0..cfg.items).map(|_| rng.random_range(0..cfg.genres.max(1))).collect();
    let attract: Vec<f64> = (0..cfg.items).map(|i| ((i + 1) as f64).powf(-cfg.zipf)).collect();
    let mut out = Vec::new();
    for u in 0..cfg.users {
        // 0 = follows the crowd, 1 = ignores popularity
        let niche: f64 = rng.random();
        let fav = rng.random_range(0..cfg.genres.max(1));
        let len = rng.random_range(cfg.profile.0..=cfg.profile.1).min(cfg.items);
        // weighted sampling without replacement via exponential keys
        let mut keyed: Vec<(f64, usize)> = (0..cfg.items)
            .map(|i| {
                let taste = if genre[i] == fav { 3.0 } else { 1.0 };
                let w = attract[i].powf(1.0 - 0.85 * niche) * taste;
                let e: f64 = -rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
                (e / w, i)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in keyed.iter().take(len) {
            let base = if genre[i] == fav { 4.0 } else { 3.0 } + 0.5 * (1.0 - i as f64 / cfg.items as f64);
            let r = (base + noise.sample(&mut rng)).round().clamp(1.0, 5.0);
            let strength = (base + noise.sample(&mut rng)).exp();
            out.push(Draw {
                user: u,
                item: i,
                rating: r as u8,
                strength,
            });
        }
    }
    out
}

/// `UserID::MovieID::Rating::Timestamp` text with 1-based ids.
pub fn movielens_text(cfg: &SyntheticConfig) -> String {
    let mut s = String::new();
    for (k, d) in generate(cfg).iter().enumerate() {
        writeln!(s, "{}::{}::{}::{}", d.user + 1, d.item + 1, d.rating, 978_300_000 + k).unwrap();
    }
    s
}

/// Tab-separated `user item count` text with a header line.
pub fn playcount_text(cfg: &SyntheticConfig) -> String {
    let mut s = String::from("user\titem\tplays\n");
    for d in generate(cfg) {
        let plays = d.strength.round().max(1.0) as u64;
        writeln!(s, "user_{}\tartist_{}\t{}", d.user + 1, d.item + 1, plays).unwrap();
    }
    s
}
