//! Tag scheme, tokens, tagged addresses, country profiles.
//!
//! Everything downstream (generation, training, evaluation) speaks in terms of
//! these types. A [`TaggedAddress`] is the universal record: one tag per token,
//! tags drawn from a closed set of eight address components.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Number of tags a model can predict.
pub const TAG_COUNT: usize = 8;

/// Address component labels plus the two control symbols used by the decoder
/// and the batcher. `Bos` and `Pad` are never valid annotations on data and are
/// never emitted as predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    StreetNumber,
    StreetName,
    Unit,
    Municipality,
    Province,
    PostalCode,
    Orientation,
    GeneralDelivery,
    /// Decoder start-of-sequence input. Control symbol, not a prediction.
    Bos,
    /// Batch padding filler. Control symbol, not a prediction.
    Pad,
}

/// The eight predictable tags, in index order.
pub const PREDICTABLE_TAGS: [Tag; TAG_COUNT] = [
    Tag::StreetNumber,
    Tag::StreetName,
    Tag::Unit,
    Tag::Municipality,
    Tag::Province,
    Tag::PostalCode,
    Tag::Orientation,
    Tag::GeneralDelivery,
];

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::StreetNumber => "StreetNumber",
            Tag::StreetName => "StreetName",
            Tag::Unit => "Unit",
            Tag::Municipality => "Municipality",
            Tag::Province => "Province",
            Tag::PostalCode => "PostalCode",
            Tag::Orientation => "Orientation",
            Tag::GeneralDelivery => "GeneralDelivery",
            Tag::Bos => "BOS",
            Tag::Pad => "PAD",
        }
    }

    /// Parses one of the eight predictable tag names. Control symbols are
    /// rejected: they are not legal in corpora.
    pub fn from_data_str(s: &str) -> Option<Tag> {
        PREDICTABLE_TAGS.iter().copied().find(|t| t.as_str() == s)
    }

    /// Class index used by the model. Predictable tags map to `0..8`.
    pub fn index(self) -> usize {
        match self {
            Tag::StreetNumber => 0,
            Tag::StreetName => 1,
            Tag::Unit => 2,
            Tag::Municipality => 3,
            Tag::Province => 4,
            Tag::PostalCode => 5,
            Tag::Orientation => 6,
            Tag::GeneralDelivery => 7,
            Tag::Bos => 8,
            Tag::Pad => 9,
        }
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        PREDICTABLE_TAGS.get(i).copied()
    }

    pub fn is_control(self) -> bool {
        matches!(self, Tag::Bos | Tag::Pad)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("address is empty after trimming whitespace")]
    EmptyAddress,
    #[error("tokens ({tokens}) and tags ({tags}) differ in length")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("control tag {0} is not allowed on data")]
    ControlTag(Tag),
    #[error("raw text does not re-join from tokens: {0:?}")]
    RawMismatch(String),
    #[error("country code must be two letters, got {0:?}")]
    BadCountryCode(String),
}

/// Splits an address into maximal runs of non-whitespace characters.
pub fn tokenize(raw: &str) -> Result<Vec<String>, DomainError> {
    let tokens: Vec<String> = raw.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(DomainError::EmptyAddress);
    }
    Ok(tokens)
}

/// A tokenized address with one gold tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedAddress {
    pub raw: String,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub country: String,
}

impl TaggedAddress {
    /// Builds a record and checks every invariant: non-empty, equal lengths,
    /// no control tags, and `raw` re-joining from tokens after whitespace
    /// normalization.
    pub fn new(
        raw: impl Into<String>,
        tokens: Vec<String>,
        tags: Vec<Tag>,
        country: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let raw = raw.into();
        let country = country.into();
        if tokens.is_empty() {
            return Err(DomainError::EmptyAddress);
        }
        if tokens.len() != tags.len() {
            return Err(DomainError::LengthMismatch {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        if let Some(&t) = tags.iter().find(|t| t.is_control()) {
            return Err(DomainError::ControlTag(t));
        }
        let rejoined = tokenize(&raw)?.join(" ");
        if rejoined != tokens.join(" ") {
            return Err(DomainError::RawMismatch(raw));
        }
        if country.chars().count() != 2 || !country.chars().all(|c| c.is_alphabetic()) {
            return Err(DomainError::BadCountryCode(country));
        }
        Ok(TaggedAddress {
            raw,
            tokens,
            tags,
            country,
        })
    }

    /// Convenience constructor: raw text is the tokens joined by single spaces.
    pub fn from_parts(
        tokens: Vec<String>,
        tags: Vec<Tag>,
        country: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let raw = tokens.join(" ");
        Self::new(raw, tokens, tags, country)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Synthetic alphabet family a lexicon draws its letters from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Script {
    Latin,
    HangulLike,
    CyrillicLike,
}

/// One slot of an address pattern: a tag, its token-count range, and whether
/// the generator may drop it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternField {
    pub tag: Tag,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub optional: bool,
}

impl PatternField {
    pub const fn required(tag: Tag, min_tokens: usize, max_tokens: usize) -> Self {
        PatternField {
            tag,
            min_tokens,
            max_tokens,
            optional: false,
        }
    }

    pub const fn optional(tag: Tag, min_tokens: usize, max_tokens: usize) -> Self {
        PatternField {
            tag,
            min_tokens,
            max_tokens,
            optional: true,
        }
    }
}

/// Ordered template of tag fields; one of the five national formatting
/// systems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressPattern {
    pub id: u8,
    pub field_order: Vec<PatternField>,
}

impl AddressPattern {
    pub fn new(id: u8, field_order: Vec<PatternField>) -> Self {
        assert!((1..=5).contains(&id), "pattern id must be in 1..=5");
        let mut seen = [false; TAG_COUNT];
        for f in &field_order {
            assert!(!f.tag.is_control(), "control tag in pattern");
            assert!(
                f.min_tokens >= 1 && f.min_tokens <= f.max_tokens,
                "bad token range"
            );
            assert!(!seen[f.tag.index()], "tag {} repeated in pattern", f.tag);
            seen[f.tag.index()] = true;
        }
        AddressPattern { id, field_order }
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.field_order.iter().any(|f| f.tag == tag)
    }

    /// Rank of a tag in the field order, used for reordering.
    pub fn position_of(&self, tag: Tag) -> Option<usize> {
        self.field_order.iter().position(|f| f.tag == tag)
    }
}

/// The five address patterns used throughout. Patterns 1, 2 and 5 carry every
/// tag (the extras optional) so any record can be re-expressed in them;
/// patterns 3 and 4 are leaner regional variants without a province.
///
/// Core orders:
///   1: number street municipality province postal
///   2: street number postal municipality province
///   3: number street postal municipality
///   4: postal municipality street number
///   5: province municipality street number postal   (the inverted family)
pub fn builtin_patterns() -> Vec<AddressPattern> {
    use Tag::*;
    vec![
        AddressPattern::new(
            1,
            vec![
                PatternField::required(StreetNumber, 1, 1),
                PatternField::required(StreetName, 1, 3),
                PatternField::optional(Orientation, 1, 1),
                PatternField::optional(Unit, 2, 2),
                PatternField::required(Municipality, 1, 2),
                PatternField::required(Province, 1, 1),
                PatternField::required(PostalCode, 1, 2),
                PatternField::optional(GeneralDelivery, 2, 2),
            ],
        ),
        AddressPattern::new(
            2,
            vec![
                PatternField::required(StreetName, 1, 3),
                PatternField::required(StreetNumber, 1, 1),
                PatternField::optional(Unit, 2, 2),
                PatternField::required(PostalCode, 1, 2),
                PatternField::required(Municipality, 1, 2),
                PatternField::optional(Orientation, 1, 1),
                PatternField::required(Province, 1, 1),
                PatternField::optional(GeneralDelivery, 2, 2),
            ],
        ),
        AddressPattern::new(
            3,
            vec![
                PatternField::required(StreetNumber, 1, 1),
                PatternField::required(StreetName, 1, 3),
                PatternField::required(PostalCode, 1, 2),
                PatternField::required(Municipality, 1, 2),
                PatternField::optional(Unit, 2, 2),
                PatternField::optional(Orientation, 1, 1),
            ],
        ),
        AddressPattern::new(
            4,
            vec![
                PatternField::required(PostalCode, 1, 2),
                PatternField::required(Municipality, 1, 2),
                PatternField::required(StreetName, 1, 3),
                PatternField::required(StreetNumber, 1, 1),
                PatternField::optional(Unit, 2, 2),
                PatternField::optional(GeneralDelivery, 2, 2),
            ],
        ),
        AddressPattern::new(
            5,
            vec![
                PatternField::required(Province, 1, 1),
                PatternField::required(Municipality, 1, 2),
                PatternField::required(StreetName, 1, 3),
                PatternField::required(StreetNumber, 1, 1),
                PatternField::optional(Unit, 2, 2),
                PatternField::optional(Orientation, 1, 1),
                PatternField::required(PostalCode, 1, 2),
                PatternField::optional(GeneralDelivery, 2, 2),
            ],
        ),
    ]
}

pub fn pattern_by_id(id: u8) -> Option<AddressPattern> {
    builtin_patterns().into_iter().find(|p| p.id == id)
}

/// A country: which patterns it formats addresses with and which lexicon it
/// draws words from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryProfile {
    pub code: String,
    pub pattern_ids: Vec<u8>,
    pub lexicon_id: String,
    pub script: Script,
}

impl CountryProfile {
    pub fn new(
        code: impl Into<String>,
        pattern_ids: Vec<u8>,
        lexicon_id: impl Into<String>,
        script: Script,
    ) -> Self {
        let code = code.into();
        assert!(
            code.chars().count() == 2 && code.chars().all(|c| c.is_alphabetic()),
            "country code must be two letters"
        );
        assert!(!pattern_ids.is_empty(), "country needs at least one pattern");
        assert!(
            pattern_ids.iter().all(|id| (1..=5).contains(id)),
            "pattern ids must be in 1..=5"
        );
        CountryProfile {
            code,
            pattern_ids,
            lexicon_id: lexicon_id.into(),
            script,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_splits_on_whitespace() {
        assert_eq!(
            tokenize("350 rue des Lilas Ouest Quebec").unwrap(),
            vec!["350", "rue", "des", "Lilas", "Ouest", "Quebec"]
        );
        assert_eq!(tokenize("  A  ").unwrap(), vec!["A"]);
        assert_eq!(tokenize("a b\tc").unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn tokenize_rejects_empty() {
        assert!(matches!(tokenize("   \t "), Err(DomainError::EmptyAddress)));
        assert!(matches!(tokenize(""), Err(DomainError::EmptyAddress)));
    }

    #[test]
    fn tag_round_trip_and_index() {
        for (i, t) in PREDICTABLE_TAGS.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(Tag::from_index(i), Some(*t));
            assert_eq!(Tag::from_data_str(t.as_str()), Some(*t));
        }
        assert_eq!(Tag::from_data_str("BOS"), None);
        assert_eq!(Tag::from_data_str("PAD"), None);
        assert_eq!(Tag::from_data_str("streetnumber"), None);
    }

    #[test]
    fn tagged_address_validates() {
        let ok = TaggedAddress::from_parts(
            vec!["12".into(), "main".into()],
            vec![Tag::StreetNumber, Tag::StreetName],
            "AA",
        );
        assert!(ok.is_ok());

        let mismatch = TaggedAddress::from_parts(
            vec!["12".into(), "main".into()],
            vec![Tag::StreetNumber],
            "AA",
        );
        assert!(matches!(mismatch, Err(DomainError::LengthMismatch { .. })));

        let control = TaggedAddress::from_parts(vec!["12".into()], vec![Tag::Pad], "AA");
        assert!(matches!(control, Err(DomainError::ControlTag(Tag::Pad))));

        let raw_mismatch = TaggedAddress::new(
            "different text",
            vec!["12".into()],
            vec![Tag::StreetNumber],
            "AA",
        );
        assert!(matches!(raw_mismatch, Err(DomainError::RawMismatch(_))));
    }

    #[test]
    fn builtin_patterns_cover_stated_orders() {
        let patterns = builtin_patterns();
        assert_eq!(patterns.len(), 5);
        let p1 = &patterns[0];
        assert!(p1.position_of(Tag::StreetNumber) < p1.position_of(Tag::StreetName));
        // Postal code near the end: after municipality and province.
        assert!(p1.position_of(Tag::PostalCode) > p1.position_of(Tag::Province));
        let p5 = &patterns[4];
        assert!(p5.position_of(Tag::Province) < p5.position_of(Tag::StreetName));
        assert!(p5.position_of(Tag::Municipality) < p5.position_of(Tag::StreetName));
        // Patterns 1, 2 and 5 can express any record.
        for p in [&patterns[0], &patterns[1], &patterns[4]] {
            for t in PREDICTABLE_TAGS {
                assert!(p.contains(t), "pattern {} missing {}", p.id, t);
            }
        }
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_under_rejoin(s in "[ a-z0-9\\t]{1,40}") {
            if let Ok(tokens) = tokenize(&s) {
                let rejoined = tokens.join(" ");
                prop_assert_eq!(tokenize(&rejoined).unwrap(), tokens);
            }
        }
    }
}
