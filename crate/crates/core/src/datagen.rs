//! Deterministic synthetic multinational address generation.
//!
//! Each record is drawn from one of its country's patterns with words from
//! the country's lexicon. Every record gets its own derived RNG seed, so
//! output is independent of evaluation order and reproducible byte-for-byte
//! from the config.

use crate::domain::{
    pattern_by_id, AddressPattern, CountryProfile, Script, Tag, TaggedAddress,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("config error: {0}")]
    Config(String),
    #[error("tag {tag} present in the address but absent from pattern {pattern}")]
    IncompatiblePattern { tag: Tag, pattern: u8 },
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

/// Word pools and formats for one language group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub street_name_words: Vec<String>,
    pub municipality_words: Vec<String>,
    pub province_words: Vec<String>,
    pub unit_designators: Vec<String>,
    pub orientation_words: Vec<String>,
    pub general_delivery_words: Vec<String>,
    /// Postal code template: `A` draws a letter, `0` draws a digit, a space
    /// splits the code into separate tokens, anything else is literal.
    pub postal_format: String,
    /// Letters used for `A` slots in the postal format.
    pub postal_letters: Vec<char>,
    pub street_number_range: (u32, u32),
}

impl Lexicon {
    /// Number of tokens the postal format expands to.
    pub fn postal_token_count(&self) -> usize {
        self.postal_format.split(' ').count()
    }

    fn pool(&self, tag: Tag) -> Option<&[String]> {
        match tag {
            Tag::StreetName => Some(&self.street_name_words),
            Tag::Municipality => Some(&self.municipality_words),
            Tag::Province => Some(&self.province_words),
            Tag::Unit => Some(&self.unit_designators),
            Tag::Orientation => Some(&self.orientation_words),
            Tag::GeneralDelivery => Some(&self.general_delivery_words),
            Tag::StreetNumber | Tag::PostalCode => None,
            Tag::Bos | Tag::Pad => None,
        }
    }
}

/// Recipe for generating a [`Lexicon`] from a seed and an alphabet family,
/// keeping config files small and corpora reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLexiconSpec {
    pub script: Script,
    pub seed: u64,
    #[serde(default = "default_street_words")]
    pub street_words: usize,
    #[serde(default = "default_municipalities")]
    pub municipalities: usize,
    #[serde(default = "default_provinces")]
    pub provinces: usize,
    #[serde(default = "default_postal_format")]
    pub postal_format: String,
    #[serde(default = "default_street_number_max")]
    pub street_number_max: u32,
}

fn default_street_words() -> usize {
    48
}
fn default_municipalities() -> usize {
    32
}
fn default_provinces() -> usize {
    10
}
fn default_postal_format() -> String {
    "00000".to_string()
}
fn default_street_number_max() -> u32 {
    9999
}

/// Letters of each synthetic alphabet family; families are disjoint Unicode
/// ranges so language overlap between lexicons is controllable.
pub fn alphabet(script: Script) -> Vec<char> {
    match script {
        Script::Latin => ('a'..='z').collect(),
        Script::HangulLike => (0..28u32)
            .map(|i| char::from_u32(0xAC00 + i * 7).expect("hangul block"))
            .collect(),
        Script::CyrillicLike => ('\u{0430}'..='\u{044F}').collect(),
    }
}

fn postal_letters(script: Script) -> Vec<char> {
    match script {
        Script::Latin => ('A'..='Z').collect(),
        other => alphabet(other),
    }
}

impl SyntheticLexiconSpec {
    pub fn new(script: Script, seed: u64) -> Self {
        SyntheticLexiconSpec {
            script,
            seed,
            street_words: default_street_words(),
            municipalities: default_municipalities(),
            provinces: default_provinces(),
            postal_format: default_postal_format(),
            street_number_max: default_street_number_max(),
        }
    }

    pub fn with_postal_format(mut self, format: &str) -> Self {
        self.postal_format = format.to_string();
        self
    }

    /// Builds the word pools. Words are stem+suffix compositions over a small
    /// morpheme inventory, so a lexicon has internal subword structure.
    pub fn build(&self) -> Lexicon {
        let letters = alphabet(self.script);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut syllable = |rng: &mut ChaCha8Rng, len: usize| -> String {
            (0..len)
                .map(|_| letters[rng.random_range(0..letters.len())])
                .collect()
        };
        let stems: Vec<String> = (0..14).map(|_| syllable(&mut rng, 3)).collect();
        let suffixes: Vec<String> = (0..8).map(|_| syllable(&mut rng, 2)).collect();
        let mut word = |rng: &mut ChaCha8Rng| -> String {
            let stem = &stems[rng.random_range(0..stems.len())];
            let suffix = &suffixes[rng.random_range(0..suffixes.len())];
            format!("{stem}{suffix}")
        };
        let mut pool = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
            let mut words = Vec::with_capacity(n);
            while words.len() < n {
                let w = word(rng);
                if !words.contains(&w) {
                    words.push(w);
                }
            }
            words
        };
        let street_name_words = pool(&mut rng, self.street_words);
        let municipality_words = pool(&mut rng, self.municipalities);
        let province_words = pool(&mut rng, self.provinces);
        let unit_designators = (0..3).map(|_| syllable(&mut rng, 3)).collect();
        let orientation_words = (0..4).map(|_| syllable(&mut rng, 4)).collect();
        let general_delivery_words = (0..3).map(|_| syllable(&mut rng, 5)).collect();
        Lexicon {
            street_name_words,
            municipality_words,
            province_words,
            unit_designators,
            orientation_words,
            general_delivery_words,
            postal_format: self.postal_format.clone(),
            postal_letters: postal_letters(self.script),
            street_number_range: (1, self.street_number_max),
        }
    }
}

/// Full generation request: countries, lexicons, sample count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub samples_per_country: usize,
    #[serde(default = "default_optional_probability")]
    pub optional_field_probability: f64,
    pub countries: Vec<CountryProfile>,
    pub lexicons: BTreeMap<String, Lexicon>,
}

fn default_optional_probability() -> f64 {
    0.3
}

impl GeneratorConfig {
    fn validate(&self) -> Result<(), GenError> {
        if self.samples_per_country == 0 {
            return Err(GenError::Config("samples_per_country must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.optional_field_probability) {
            return Err(GenError::Config(
                "optional_field_probability must be in [0, 1]".into(),
            ));
        }
        if self.countries.is_empty() {
            return Err(GenError::Config("no countries configured".into()));
        }
        for country in &self.countries {
            let lexicon = self.lexicons.get(&country.lexicon_id).ok_or_else(|| {
                GenError::Config(format!(
                    "country {} references unknown lexicon {:?}",
                    country.code, country.lexicon_id
                ))
            })?;
            for &pid in &country.pattern_ids {
                let pattern = pattern_by_id(pid).ok_or_else(|| {
                    GenError::Config(format!("country {} uses unknown pattern {pid}", country.code))
                })?;
                for field in &pattern.field_order {
                    if let Some(pool) = lexicon.pool(field.tag) {
                        if pool.is_empty() {
                            return Err(GenError::Config(format!(
                                "lexicon {:?} has an empty pool for {}",
                                country.lexicon_id, field.tag
                            )));
                        }
                    }
                    if field.tag == Tag::PostalCode {
                        let n = lexicon.postal_token_count();
                        if n < field.min_tokens || n > field.max_tokens {
                            return Err(GenError::Config(format!(
                                "lexicon {:?} postal format expands to {n} tokens, pattern {pid} allows {}..={}",
                                country.lexicon_id, field.min_tokens, field.max_tokens
                            )));
                        }
                    }
                    if field.tag == Tag::StreetNumber {
                        let (lo, hi) = lexicon.street_number_range;
                        if lo > hi || lo == 0 {
                            return Err(GenError::Config(format!(
                                "lexicon {:?} has an invalid street number range",
                                country.lexicon_id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}

/// Stable seed derivation used everywhere randomness is forked.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut state = base ^ stream.rotate_left(17);
    let first = splitmix64(&mut state);
    let mut state2 = first ^ index;
    splitmix64(&mut state2)
}

fn field_tokens(
    tag: Tag,
    count: usize,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    match tag {
        Tag::StreetNumber => {
            let (lo, hi) = lexicon.street_number_range;
            vec![rng.random_range(lo..=hi).to_string()]
        }
        Tag::PostalCode => lexicon
            .postal_format
            .split(' ')
            .map(|part| {
                part.chars()
                    .map(|c| match c {
                        'A' => lexicon.postal_letters
                            [rng.random_range(0..lexicon.postal_letters.len())],
                        '0' => char::from_digit(rng.random_range(0..10), 10).unwrap(),
                        other => other,
                    })
                    .collect::<String>()
            })
            .collect(),
        Tag::Unit => {
            let pool = &lexicon.unit_designators;
            let mut tokens = vec![pool[rng.random_range(0..pool.len())].clone()];
            for _ in 1..count {
                tokens.push(rng.random_range(1..1000u32).to_string());
            }
            tokens
        }
        Tag::GeneralDelivery => {
            let pool = &lexicon.general_delivery_words;
            let mut tokens = vec![pool[rng.random_range(0..pool.len())].clone()];
            for _ in 1..count {
                tokens.push(rng.random_range(1..10000u32).to_string());
            }
            tokens
        }
        other => {
            let pool = lexicon.pool(other).expect("pool-backed tag");
            (0..count)
                .map(|_| pool[rng.random_range(0..pool.len())].clone())
                .collect()
        }
    }
}

fn generate_record(
    country: &CountryProfile,
    lexicon: &Lexicon,
    patterns: &[AddressPattern],
    optional_p: f64,
    seed: u64,
) -> TaggedAddress {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = &patterns[rng.random_range(0..patterns.len())];
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for field in &pattern.field_order {
        if field.optional && rng.random::<f64>() >= optional_p {
            continue;
        }
        let count = rng.random_range(field.min_tokens..=field.max_tokens);
        let words = field_tokens(field.tag, count, lexicon, &mut rng);
        for w in words {
            tokens.push(w);
            tags.push(field.tag);
        }
    }
    TaggedAddress::from_parts(tokens, tags, country.code.clone())
        .expect("generated record satisfies invariants")
}

/// Generates `samples_per_country` records per country, grouped by country in
/// config order. Deterministic in the config alone.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<TaggedAddress>, GenError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.countries.len() * config.samples_per_country);
    for country in &config.countries {
        let lexicon = &config.lexicons[&country.lexicon_id];
        let patterns: Vec<AddressPattern> = country
            .pattern_ids
            .iter()
            .map(|&id| pattern_by_id(id).expect("validated pattern id"))
            .collect();
        let stream = fnv64(&country.code);
        for i in 0..config.samples_per_country {
            let seed = derive_seed(config.seed, stream, i as u64);
            out.push(generate_record(
                country,
                lexicon,
                &patterns,
                config.optional_field_probability,
                seed,
            ));
        }
    }
    Ok(out)
}

/// Permutes an address's token/tag pairs so that tag blocks follow the target
/// pattern's field order. Token order inside a tag block is preserved, so the
/// multiset of (token, tag) pairs is unchanged.
pub fn reorder_to_pattern(
    addr: &TaggedAddress,
    target: &AddressPattern,
) -> Result<TaggedAddress, GenError> {
    for &tag in &addr.tags {
        if !target.contains(tag) {
            return Err(GenError::IncompatiblePattern {
                tag,
                pattern: target.id,
            });
        }
    }
    let mut tokens = Vec::with_capacity(addr.tokens.len());
    let mut tags = Vec::with_capacity(addr.tags.len());
    for field in &target.field_order {
        for (token, &tag) in addr.tokens.iter().zip(&addr.tags) {
            if tag == field.tag {
                tokens.push(token.clone());
                tags.push(tag);
            }
        }
    }
    Ok(TaggedAddress::from_parts(tokens, tags, addr.country.clone())?)
}

/// Deterministic shuffled split. The first part holds `ceil(fraction * n)`
/// records.
pub fn split(
    corpus: &[TaggedAddress],
    train_fraction: f64,
    seed: u64,
) -> (Vec<TaggedAddress>, Vec<TaggedAddress>) {
    assert!(!corpus.is_empty(), "cannot split an empty corpus");
    assert!((0.0..=1.0).contains(&train_fraction));
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let train_len = ((train_fraction * corpus.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let train_len = train_len.min(corpus.len());
    let train = indices[..train_len]
        .iter()
        .map(|&i| corpus[i].clone())
        .collect();
    let validation = indices[train_len..]
        .iter()
        .map(|&i| corpus[i].clone())
        .collect();
    (train, validation)
}
