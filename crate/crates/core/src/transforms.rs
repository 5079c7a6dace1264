//! Input-side text transforms: relation label splitting, triple
//! linearization with marker tokens, masking and description variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::TripleRecord;

pub const HEAD_MARKER: &str = "<head>";
pub const REL_MARKER: &str = "<rel>";
pub const TAIL_MARKER: &str = "<tail>";
pub const DESC_MARKER: &str = "<rel_desc>";
pub const MASK_TOKEN: &str = "<mask>";

const MARKERS: [&str; 5] = [HEAD_MARKER, REL_MARKER, TAIL_MARKER, DESC_MARKER, MASK_TOKEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error("variant {0} requires a relation description")]
    MissingDescription(Variant),
    #[error("{field} contains the reserved marker {marker}")]
    MarkerCollision { field: &'static str, marker: &'static str },
    #[error("not a linearized triple: {0}")]
    Unparseable(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    MaskTest,
    MaskTrain,
    MaskAll,
    DescRepl,
    DescCat,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Plain,
        Variant::MaskTest,
        Variant::MaskTrain,
        Variant::MaskAll,
        Variant::DescRepl,
        Variant::DescCat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::MaskTest => "mask-test",
            Variant::MaskTrain => "mask-train",
            Variant::MaskAll => "mask-all",
            Variant::DescRepl => "desc-repl",
            Variant::DescCat => "desc-cat",
        }
    }

    pub fn is_mask(self) -> bool {
        matches!(self, Variant::MaskTest | Variant::MaskTrain | Variant::MaskAll)
    }

    /// Whether the relation is masked when preparing data for the given phase.
    ///
    /// `mask-test` masks only evaluation inputs, `mask-train` only training
    /// inputs, `mask-all` both.
    pub fn masks_phase(self, phase: Phase) -> bool {
        match (self, phase) {
            (Variant::MaskAll, _) => true,
            (Variant::MaskTest, Phase::Test) => true,
            (Variant::MaskTrain, Phase::Train) => true,
            _ => false,
        }
    }

    /// The variant that is actually rendered for a phase: mask variants
    /// collapse to `Plain` in the phase they do not apply to.
    pub fn for_phase(self, phase: Phase) -> Variant {
        if self.is_mask() && !self.masks_phase(phase) {
            Variant::Plain
        } else {
            self
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| TransformError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizedInput {
    pub text: String,
    pub variant: Variant,
}

impl fmt::Display for LinearizedInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Upper,
    Lower,
    Digit,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_uppercase() {
        CharClass::Upper
    } else if c.is_lowercase() {
        CharClass::Lower
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

fn is_acronym(word: &str) -> bool {
    word.chars().filter(|c| c.is_alphabetic()).count() >= 2
        && word.chars().all(|c| c.is_uppercase())
}

/// Splits a camel-case relation label into space-separated words.
///
/// Boundaries are inserted at lowercase/digit to uppercase transitions,
/// between letters and digits, and before the last capital of an uppercase
/// run that continues in lowercase (`"XMLParser"` -> `"XML parser"`).
/// Words are lowercased unless they are all-caps runs of two or more letters.
///
/// ```
/// use rel2text::transforms::split_camel_case;
/// assert_eq!(split_camel_case("firstAirDateABC"), "first air date ABC");
/// ```
pub fn split_camel_case(label: &str) -> String {
    let mut words: Vec<String> = Vec::new();
    for chunk in label.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if i > 0 {
                let prev = class_of(chars[i - 1]);
                let cur = class_of(c);
                let next = chars.get(i + 1).copied().map(class_of);
                let boundary = match (prev, cur) {
                    (CharClass::Lower | CharClass::Digit, CharClass::Upper) => true,
                    (CharClass::Upper | CharClass::Lower, CharClass::Digit) => true,
                    (CharClass::Digit, CharClass::Lower) => true,
                    (CharClass::Upper, CharClass::Upper) => next == Some(CharClass::Lower),
                    _ => false,
                };
                if boundary && !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
            }
            current.push(c);
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
        .into_iter()
        .map(|w| if is_acronym(&w) { w } else { w.to_lowercase() })
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_markers(field: &'static str, content: &str) -> Result<(), TransformError> {
    match MARKERS.iter().find(|m| content.contains(*m)) {
        Some(marker) => Err(TransformError::MarkerCollision { field, marker }),
        None => Ok(()),
    }
}

/// Serializes a triple as `<head> H <rel> R <tail> T`.
///
/// The relation slot holds the split label (`Plain`), `<mask>` (mask
/// variants) or the description (`DescRepl`); `DescCat` appends
/// `<rel_desc> D` to the plain form.
pub fn linearize(
    triple: &TripleRecord,
    variant: Variant,
    description: Option<&str>,
) -> Result<LinearizedInput, TransformError> {
    check_markers("head", &triple.head)?;
    check_markers("tail", &triple.tail)?;
    let label = split_camel_case(&triple.relation.label);
    check_markers("relation", &label)?;

    let needs_desc = matches!(variant, Variant::DescRepl | Variant::DescCat);
    let description = if needs_desc {
        let d = description
            .filter(|d| !d.trim().is_empty())
            .ok_or(TransformError::MissingDescription(variant))?;
        check_markers("description", d)?;
        Some(d)
    } else {
        None
    };

    let rel = match variant {
        Variant::Plain | Variant::DescCat => label.as_str(),
        Variant::MaskTest | Variant::MaskTrain | Variant::MaskAll => MASK_TOKEN,
        Variant::DescRepl => description.unwrap_or_default(),
    };
    let mut text = format!(
        "{HEAD_MARKER} {} {REL_MARKER} {rel} {TAIL_MARKER} {}",
        triple.head, triple.tail
    );
    if variant == Variant::DescCat {
        text.push_str(&format!(" {DESC_MARKER} {}", description.unwrap_or_default()));
    }
    Ok(LinearizedInput { text, variant })
}

/// Constituents recovered from a linearized input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedInput {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub description: Option<String>,
}

/// Inverse of [`linearize`]: splits a marker string back into its slots.
pub fn parse_linearized(text: &str) -> Result<ParsedInput, TransformError> {
    let bad = || TransformError::Unparseable(text.to_string());
    let rest = text
        .strip_prefix(HEAD_MARKER)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(bad)?;
    let rel_sep = format!(" {REL_MARKER} ");
    let tail_sep = format!(" {TAIL_MARKER} ");
    let desc_sep = format!(" {DESC_MARKER} ");

    let (head, rest) = rest.split_once(&rel_sep).ok_or_else(bad)?;
    let (relation, rest) = rest.split_once(&tail_sep).ok_or_else(bad)?;
    let (tail, description) = match rest.split_once(&desc_sep) {
        Some((t, d)) => (t, Some(d.to_string())),
        None => (rest, None),
    };
    Ok(ParsedInput {
        head: head.to_string(),
        relation: relation.to_string(),
        tail: tail.to_string(),
        description,
    })
}

fn content_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True when no token of the (split) relation label leaks into the
/// non-entity parts of a masked input. Entity spans are exempt.
pub fn mask_coverage_check(input: &LinearizedInput, relation_label: &str) -> bool {
    let Ok(parsed) = parse_linearized(&input.text) else {
        return false;
    };
    let label_tokens = content_tokens(&split_camel_case(relation_label));
    let mut exposed = Vec::new();
    if parsed.relation != MASK_TOKEN {
        exposed.extend(content_tokens(&parsed.relation));
    }
    if let Some(d) = &parsed.description {
        exposed.extend(content_tokens(d));
    }
    !label_tokens.iter().any(|t| exposed.contains(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{RelationRecord, Source};

    fn triple(head: &str, label: &str, tail: &str) -> TripleRecord {
        TripleRecord::new(head, RelationRecord::new("r", label, Source::Wikidata), tail)
    }

    #[test]
    fn camel_case_examples() {
        assert_eq!(split_camel_case("musicBy"), "music by");
        assert_eq!(split_camel_case("parent"), "parent");
        assert_eq!(split_camel_case("firstAirDateABC"), "first air date ABC");
        assert_eq!(split_camel_case("KET ED"), "KET ED");
        assert_eq!(split_camel_case("XMLParser"), "XML parser");
        assert_eq!(split_camel_case("population2010"), "population 2010");
        assert_eq!(split_camel_case("  sport   country "), "sport country");
        assert_eq!(split_camel_case(""), "");
    }

    #[test]
    fn linearize_plain_mask_desc() {
        let t = triple("Loco-Motion", "computing platform", "Tomy Tutor");
        let plain = linearize(&t, Variant::Plain, None).unwrap();
        assert_eq!(
            plain.text,
            "<head> Loco-Motion <rel> computing platform <tail> Tomy Tutor"
        );
        let masked = linearize(&t, Variant::MaskAll, None).unwrap();
        assert_eq!(masked.text, "<head> Loco-Motion <rel> <mask> <tail> Tomy Tutor");
        let desc = "some sort of hardware architecture or software framework, that allows this software to run";
        let cat = linearize(&t, Variant::DescCat, Some(desc)).unwrap();
        assert_eq!(cat.text, format!("{} <rel_desc> {desc}", plain.text));
        let repl = linearize(&t, Variant::DescRepl, Some(desc)).unwrap();
        assert_eq!(repl.text, format!("<head> Loco-Motion <rel> {desc} <tail> Tomy Tutor"));
    }

    #[test]
    fn linearize_errors() {
        let t = triple("A", "r", "B");
        assert_eq!(
            linearize(&t, Variant::DescCat, None),
            Err(TransformError::MissingDescription(Variant::DescCat))
        );
        let bad = triple("A <tail> x", "r", "B");
        assert!(matches!(
            linearize(&bad, Variant::Plain, None),
            Err(TransformError::MarkerCollision { field: "head", .. })
        ));
    }

    #[test]
    fn mask_check() {
        let t = triple("Yousra Matine", "country", "Morocco");
        let m = linearize(&t, Variant::MaskTest, None).unwrap();
        assert!(mask_coverage_check(&m, "country"));

        let t = triple("Country Music Hall", "country", "USA");
        let m = linearize(&t, Variant::MaskAll, None).unwrap();
        assert!(mask_coverage_check(&m, "country"));

        let leaky = LinearizedInput {
            text: "<head> Yousra Matine <rel> sport country <tail> Morocco".into(),
            variant: Variant::MaskAll,
        };
        assert!(!mask_coverage_check(&leaky, "sportCountry"));
    }

    #[test]
    fn phase_wiring() {
        assert_eq!(Variant::MaskTest.for_phase(Phase::Train), Variant::Plain);
        assert_eq!(Variant::MaskTest.for_phase(Phase::Test), Variant::MaskTest);
        assert_eq!(Variant::MaskTrain.for_phase(Phase::Test), Variant::Plain);
        assert_eq!(Variant::MaskAll.for_phase(Phase::Train), Variant::MaskAll);
        assert_eq!(Variant::DescCat.for_phase(Phase::Test), Variant::DescCat);
        assert_eq!("mask-all".parse::<Variant>().unwrap(), Variant::MaskAll);
    }
}
