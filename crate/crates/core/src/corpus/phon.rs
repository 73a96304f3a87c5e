//! Character-level normalization shared by suffix matching and stem comparison.

pub const PRIMARY_STRESS: char = '\u{02C8}';
pub const SECONDARY_STRESS: char = '\u{02CC}';
pub const LENGTH: char = '\u{02D0}';

pub fn is_stress_mark(c: char) -> bool {
    matches!(c, PRIMARY_STRESS | SECONDARY_STRESS | '\'')
}

pub fn is_combining(c: char) -> bool {
    ('\u{0300}'..='\u{036F}').contains(&c)
}

/// Base vowel of a precomposed accented vowel, e.g. `á` -> `a`.
pub fn unaccent(c: char) -> char {
    match c {
        'á' | 'à' | 'â' | 'ä' => 'a',
        'é' | 'è' | 'ê' | 'ë' => 'e',
        'í' | 'ì' | 'î' | 'ï' => 'i',
        'ó' | 'ò' | 'ô' | 'ö' => 'o',
        'ú' | 'ù' | 'û' | 'ü' => 'u',
        'Á' => 'A',
        'É' => 'E',
        'Í' => 'I',
        'Ó' => 'O',
        'Ú' => 'U',
        _ => c,
    }
}

/// Removes stress marks only.
pub fn strip_stress(s: &str) -> String {
    s.chars().filter(|&c| !is_stress_mark(c)).collect()
}

/// Removes stress marks and accents. This is the view suffix matching uses.
pub fn unstressed(s: &str) -> String {
    s.chars().filter(|&c| !is_stress_mark(c) && !is_combining(c)).map(unaccent).collect()
}

/// Collapses tense/lax vowel pairs to one quality.
fn collapse_quality(c: char) -> char {
    match c {
        'ɛ' | 'ə' => 'e',
        'ɔ' => 'o',
        'ɪ' | 'ɨ' => 'i',
        'ʊ' => 'u',
        'ɑ' | 'ɐ' | 'æ' => 'a',
        _ => c,
    }
}

/// The lenient comparison key: no stress, accents, length marks, and one
/// quality per vowel height.
pub fn relaxed(s: &str) -> String {
    unstressed(s).chars().filter(|&c| c != LENGTH && c != ':').map(collapse_quality).collect()
}
