use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MAX_COLUMN: u32 = 702; // ZZ
pub const MAX_ROW: u32 = 1_048_576;

/// A single-cell reference. `sheet` is `None` when the reference is relative
/// to the sheet containing the formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRef {
    pub sheet: Option<String>,
    pub col: u32,
    pub row: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid cell reference `{0}`")]
pub struct BadCellRef(pub String);

impl CellRef {
    pub fn new(sheet: Option<&str>, col: u32, row: u32) -> CellRef {
        CellRef {
            sheet: sheet.map(str::to_string),
            col,
            row,
        }
    }

    /// The same reference with the sheet filled in from `default` when absent.
    pub fn qualified(&self, default: &str) -> CellRef {
        CellRef {
            sheet: Some(self.sheet.clone().unwrap_or_else(|| default.to_string())),
            col: self.col,
            row: self.row,
        }
    }

    /// Cell address without the sheet part, e.g. `C7`.
    pub fn address(&self) -> String {
        format!("{}{}", column_name(self.col), self.row)
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sheet {
            Some(s) => write!(f, "{s}!{}{}", column_name(self.col), self.row),
            None => write!(f, "{}{}", column_name(self.col), self.row),
        }
    }
}

/// `A` -> 1, `ZZ` -> 702.
pub fn column_index(letters: &str) -> Option<u32> {
    if letters.is_empty() || letters.len() > 2 {
        return None;
    }
    let mut idx = 0u32;
    for c in letters.bytes() {
        if !c.is_ascii_alphabetic() {
            return None;
        }
        idx = idx * 26 + u32::from(c.to_ascii_uppercase() - b'A' + 1);
    }
    Some(idx)
}

pub fn column_name(mut col: u32) -> String {
    let mut out = Vec::with_capacity(2);
    while col > 0 {
        let rem = (col - 1) % 26;
        out.push(b'A' + rem as u8);
        col = (col - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Parses `C7`, `$C$7`, `Sheet!C7` or `'My Sheet'!C7`.
pub fn parse_a1(text: &str) -> Result<CellRef, BadCellRef> {
    let bad = || BadCellRef(text.to_string());
    let (sheet, addr) = match text.rfind('!') {
        Some(pos) => {
            let raw = &text[..pos];
            let name = raw
                .strip_prefix('\'')
                .and_then(|s| s.strip_suffix('\''))
                .unwrap_or(raw);
            if name.is_empty() {
                return Err(bad());
            }
            (Some(name), &text[pos + 1..])
        }
        None => (None, text),
    };
    let (col, row) = split_address(addr).ok_or_else(bad)?;
    Ok(CellRef::new(sheet, col, row))
}

/// Splits an address such as `$AB$12` into (column, row).
pub(crate) fn split_address(addr: &str) -> Option<(u32, u32)> {
    let addr = addr.strip_prefix('$').unwrap_or(addr);
    let letters_end = addr.find(|c: char| !c.is_ascii_alphabetic())?;
    let (letters, rest) = addr.split_at(letters_end);
    let digits = rest.strip_prefix('$').unwrap_or(rest);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    let col = column_index(letters)?;
    let row: u32 = digits.parse().ok()?;
    (row <= MAX_ROW).then_some((col, row))
}

impl FromStr for CellRef {
    type Err = BadCellRef;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_a1(s)
    }
}

impl Serialize for CellRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_a1(&s).map_err(serde::de::Error::custom)
    }
}
