use core::fmt;

use serde::{Deserialize, Serialize};

/// The five text properties every sticker carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    /// Text recognized in the sticker image.
    Ocr,
    /// Character IP depicted.
    Ip,
    /// Main object or concept.
    Entity,
    /// Visual style.
    Style,
    /// Intended message or sentiment.
    Meaning,
}

/// Canonical order `o, c, e, v, m`.
pub const PROPERTIES: [Property; 5] = [
    Property::Ocr,
    Property::Ip,
    Property::Entity,
    Property::Style,
    Property::Meaning,
];

impl Property {
    pub fn index(self) -> usize {
        match self {
            Property::Ocr => 0,
            Property::Ip => 1,
            Property::Entity => 2,
            Property::Style => 3,
            Property::Meaning => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Property> {
        PROPERTIES.get(i).copied()
    }

    /// One-letter symbol: `o c e v m`.
    pub fn symbol(self) -> char {
        match self {
            Property::Ocr => 'o',
            Property::Ip => 'c',
            Property::Entity => 'e',
            Property::Style => 'v',
            Property::Meaning => 'm',
        }
    }

    pub fn from_symbol(c: char) -> Option<Property> {
        match c {
            'o' => Some(Property::Ocr),
            'c' => Some(Property::Ip),
            'e' => Some(Property::Entity),
            'v' => Some(Property::Style),
            'm' => Some(Property::Meaning),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::Ocr => "ocr",
            Property::Ip => "ip",
            Property::Entity => "entity",
            Property::Style => "style",
            Property::Meaning => "meaning",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
