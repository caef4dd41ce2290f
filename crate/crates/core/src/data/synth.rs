//! Synthetic corpora with the on-disk layouts of the real datasets.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::Result;

use super::images::{IMAGE_CHANNELS, IMAGE_SIDE};

pub const SYNTH_CLASSES: usize = 10;

/// Knobs of the synthetic image generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSynthConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Weight of a second class's pattern blended into every image.
    pub distractor: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ImageSynthConfig {
    fn default() -> Self {
        ImageSynthConfig {
            train_per_class: 500,
            test_per_class: 100,
            distractor: 0.45,
            noise_std: 0.12,
            seed: 0,
        }
    }
}

const PALETTE: [[f64; 3]; 5] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.7, 0.3],
    [0.25, 0.35, 0.9],
    [0.85, 0.8, 0.2],
    [0.6, 0.3, 0.75],
];

struct ClassPattern {
    color: [f64; 3],
    theta: f64,
    freq: f64,
    blob: (f64, f64),
}

fn class_pattern(c: usize) -> ClassPattern {
    ClassPattern {
        color: PALETTE[c % PALETTE.len()],
        theta: c as f64 * PI / SYNTH_CLASSES as f64,
        freq: 2.0 + (c % 3) as f64,
        blob: (8.0 + 16.0 * ((c * 7) % 10) as f64 / 10.0, 8.0 + 16.0 * ((c * 3) % 10) as f64 / 10.0),
    }
}

fn render(p: &ClassPattern, phase: f64, shift: (f64, f64), x: f64, y: f64) -> f64 {
    let s = IMAGE_SIDE as f64;
    let u = (x * p.theta.cos() + y * p.theta.sin()) / s;
    let grating = (2.0 * PI * p.freq * u + phase).sin();
    let (bx, by) = (p.blob.0 + shift.0, p.blob.1 + shift.1);
    let blob = (-((x - bx).powi(2) + (y - by).powi(2)) / 30.0).exp();
    0.5 * grating + blob
}

fn synth_image<R: Rng>(class: usize, cfg: &ImageSynthConfig, rng: &mut R) -> Vec<u8> {
    let own = class_pattern(class);
    let other_class = (class + rng.random_range(1..SYNTH_CLASSES)) % SYNTH_CLASSES;
    let other = class_pattern(other_class);
    let noise = Normal::new(0.0, cfg.noise_std).expect("valid std");
    let (ph1, ph2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let sh1 = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
    let sh2 = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
    let gain = rng.random_range(0.7..1.3);
    let mix = cfg.distractor * rng.random_range(0.5..1.0);
    let brightness = rng.random_range(-0.1..0.1);
    let mut out = vec![0u8; IMAGE_CHANNELS * IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let (xf, yf) = (x as f64, y as f64);
            let a = render(&own, ph1, sh1, xf, yf) * gain;
            let b = render(&other, ph2, sh2, xf, yf) * mix;
            for c in 0..IMAGE_CHANNELS {
                let v = 0.45 + brightness + 0.3 * (a * own.color[c] + b * other.color[c]) + noise.sample(rng);
                out[(c * IMAGE_SIDE + y) * IMAGE_SIDE + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

fn records<R: Rng>(per_class: usize, cfg: &ImageSynthConfig, rng: &mut R) -> Vec<Vec<u8>> {
    let mut recs = Vec::with_capacity(per_class * SYNTH_CLASSES);
    for i in 0..per_class * SYNTH_CLASSES {
        let class = i % SYNTH_CLASSES;
        let mut r = vec![class as u8];
        r.extend(synth_image(class, cfg, rng));
        recs.push(r);
    }
    recs
}

/// Writes a 10-class CIFAR-10-layout corpus (`data_batch_1..5.bin`,
/// `test_batch.bin`) into `dir`.
pub fn write_cifar_like(dir: &Path, cfg: &ImageSynthConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = records(cfg.train_per_class, cfg, &mut rng);
    let per_file = train.len().div_ceil(5).max(1);
    for (i, chunk) in train.chunks(per_file).chain(std::iter::repeat_n(&[][..], 5)).take(5).enumerate() {
        fs::write(dir.join(format!("data_batch_{}.bin", i + 1)), chunk.concat())?;
    }
    fs::write(dir.join("test_batch.bin"), records(cfg.test_per_class, cfg, &mut rng).concat())?;
    Ok(())
}

const GENRES: [&str; 10] = [
    "Action", "Adventure", "Comedy", "Crime", "Drama", "Family", "Horror", "Romance", "Sci-Fi", "Thriller",
];
const RATINGS: [&str; 5] = ["G", "PG", "PG-13", "R", "NC-17"];
const COUNTRIES: [&str; 6] = ["USA", "UK", "France", "Germany", "India", "Japan"];
const WORDS: [&str; 16] = [
    "city", "family", "journey", "secret", "night", "war", "love", "friend", "island", "road", "house", "king",
    "river", "game", "school", "storm",
];
const PRAISE: [&str; 5] = ["acclaimed", "masterful", "moving", "brilliant", "timeless"];
const PANS: [&str; 5] = ["forgettable", "clumsy", "dull", "derivative", "messy"];

/// Writes a Table-1-shaped movie CSV whose rating depends on a latent
/// quality visible through every feature group.
pub fn write_movie_fixture(path: &Path, rows: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "title", "budget", "duration", "total_companies", "release_day", "release_month", "release_year",
        "total_languages", "actor_fb_likes", "cast_fb_likes", "director_fb_likes", "crew_fb_likes",
        "production_countries", "content_rating", "genres", "plot_keywords", "overview", "tagline", "vote_average",
    ])?;
    for _ in 0..rows {
        let q: f64 = std.sample(&mut rng);
        let year = match rng.random_range(0..100) {
            0..10 => rng.random_range(1990..2000),
            10..85 => rng.random_range(2000..=2013),
            _ => rng.random_range(2014..=2016),
        };
        let budget = if rng.random_bool(0.05) {
            String::new()
        } else {
            format!("{:.0}", LogNormal::new(17.0 + 0.3 * q, 0.8).expect("valid").sample(&mut rng))
        };
        let duration = (105.0 + 8.0 * q + 15.0 * std.sample(&mut rng)).clamp(70.0, 200.0).round();
        let likes = |base: f64, rng: &mut ChaCha8Rng| {
            format!("{:.0}", (base + 0.9 * q + 0.5 * std.sample(rng)).exp())
        };
        let n_genres = rng.random_range(1..=3);
        let genre_list: Vec<&str> = GENRES.choose_multiple(&mut rng, n_genres).copied().collect();
        let genre_bonus: f64 = genre_list
            .iter()
            .map(|g| match *g {
                "Drama" => 0.4,
                "Horror" => -0.5,
                "Family" => 0.1,
                "Comedy" => -0.2,
                _ => 0.0,
            })
            .sum();
        let positive = 1.0 / (1.0 + (-1.5 * q).exp());
        let mut words: Vec<&str> = WORDS.choose_multiple(&mut rng, 4).copied().collect();
        for _ in 0..2 {
            words.push(if rng.random_bool(positive) {
                PRAISE.choose(&mut rng).expect("non-empty")
            } else {
                PANS.choose(&mut rng).expect("non-empty")
            });
        }
        let n_countries = rng.random_range(1..=2);
        let rating = (6.3 + 0.7 * q + genre_bonus + 0.3 * std.sample(&mut rng)).clamp(1.0, 10.0);
        let record: Vec<String> = vec![
            format!("The {} {}", WORDS.choose(&mut rng).expect("non-empty"), WORDS.choose(&mut rng).expect("non-empty")),
            budget,
            format!("{duration}"),
            rng.random_range(1..=8).to_string(),
            rng.random_range(1..=28).to_string(),
            rng.random_range(1..=12).to_string(),
            year.to_string(),
            rng.random_range(1..=4).to_string(),
            likes(8.0, &mut rng),
            likes(9.0, &mut rng),
            likes(5.0, &mut rng),
            likes(4.0, &mut rng),
            COUNTRIES.choose_multiple(&mut rng, n_countries).copied().collect::<Vec<_>>().join("|"),
            RATINGS.choose(&mut rng).expect("non-empty").to_string(),
            genre_list.join("|"),
            words[..3].join("|"),
            words.join(" "),
            format!("A {} story", words[4]),
            format!("{rating:.1}"),
        ];
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
