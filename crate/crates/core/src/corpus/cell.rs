use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mood {
    Ind,
    Sbjv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Person {
    First,
    Second,
    Third,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Number {
    Sg,
    Pl,
}

impl Mood {
    pub const ALL: [Mood; 2] = [Mood::Ind, Mood::Sbjv];

    pub fn code(self) -> &'static str {
        match self {
            Mood::Ind => "IND",
            Mood::Sbjv => "SBJV",
        }
    }
}

impl Person {
    pub const ALL: [Person; 3] = [Person::First, Person::Second, Person::Third];

    pub fn code(self) -> &'static str {
        match self {
            Person::First => "1",
            Person::Second => "2",
            Person::Third => "3",
        }
    }
}

impl Number {
    pub const ALL: [Number; 2] = [Number::Sg, Number::Pl];

    pub fn code(self) -> &'static str {
        match self {
            Number::Sg => "SG",
            Number::Pl => "PL",
        }
    }
}

/// Part of speech and tense are constant across the present-tense paradigm.
pub const POS: &str = "V";
pub const TENSE: &str = "PRS";

/// One cell of the 12-cell present-tense paradigm.
///
/// Serialized as a UniMorph bundle, `V;IND;PRS;1;SG`. Parsing accepts the
/// features in any order since bundles are unordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CellTag {
    pub mood: Mood,
    pub person: Person,
    pub number: Number,
}

impl CellTag {
    /// Indicative cells first, then subjunctive; singular before plural.
    pub const ALL: [CellTag; 12] = {
        let mut all = [CellTag { mood: Mood::Ind, person: Person::First, number: Number::Sg }; 12];
        let moods = [Mood::Ind, Mood::Sbjv];
        let numbers = [Number::Sg, Number::Pl];
        let persons = [Person::First, Person::Second, Person::Third];
        let mut i = 0;
        while i < 12 {
            all[i] = CellTag { mood: moods[i / 6], number: numbers[(i / 3) % 2], person: persons[i % 3] };
            i += 1;
        }
        all
    };

    pub const fn new(mood: Mood, person: Person, number: Number) -> Self {
        CellTag { mood, person, number }
    }

    /// Position in [`CellTag::ALL`].
    pub fn index(self) -> usize {
        self.mood as usize * 6 + self.number as usize * 3 + self.person as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        CellTag::ALL.get(i).copied()
    }

    /// 1SG indicative and every subjunctive cell.
    pub fn is_l_cell(self) -> bool {
        self.mood == Mood::Sbjv || (self.person == Person::First && self.number == Number::Sg)
    }

    /// Short label such as `1SG.IND`.
    pub fn label(self) -> String {
        format!("{}{}.{}", self.person.code(), self.number.code(), self.mood.code())
    }

    /// The five subtags in serialization order.
    pub fn subtags(self) -> [&'static str; 5] {
        [POS, self.mood.code(), TENSE, self.person.code(), self.number.code()]
    }

    pub fn l_cells() -> impl Iterator<Item = CellTag> {
        CellTag::ALL.into_iter().filter(|c| c.is_l_cell())
    }
}

impl fmt::Display for CellTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.subtags().join(";"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed cell tag {0:?}")]
pub struct TagParseError(pub String);

impl FromStr for CellTag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TagParseError(s.to_string());
        let (mut pos, mut tense) = (false, false);
        let (mut mood, mut person, mut number) = (None, None, None);
        fn set<T>(slot: &mut Option<T>, v: T) -> bool {
            slot.replace(v).is_none()
        }
        for feat in s.trim().split(';') {
            let fresh = match feat.trim() {
                "V" => !std::mem::replace(&mut pos, true),
                "PRS" => !std::mem::replace(&mut tense, true),
                "IND" => set(&mut mood, Mood::Ind),
                "SBJV" => set(&mut mood, Mood::Sbjv),
                "1" => set(&mut person, Person::First),
                "2" => set(&mut person, Person::Second),
                "3" => set(&mut person, Person::Third),
                "SG" => set(&mut number, Number::Sg),
                "PL" => set(&mut number, Number::Pl),
                _ => false,
            };
            if !fresh {
                return Err(err());
            }
        }
        match (pos, tense, mood, person, number) {
            (true, true, Some(mood), Some(person), Some(number)) => Ok(CellTag { mood, person, number }),
            _ => Err(err()),
        }
    }
}

impl From<CellTag> for String {
    fn from(t: CellTag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for CellTag {
    type Error = TagParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
