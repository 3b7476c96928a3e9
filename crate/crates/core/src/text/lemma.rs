//! Rule-based English lemmatizer for concept coverage.
//!
//! Inflectional suffixes are stripped in order (`ies`, `es`, `s`, `ing`,
//! `ed`) and the stem is repaired by undoubling a final consonant pair or
//! restoring a silent `e` on short consonant-vowel-consonant stems. Rules are
//! applied until nothing changes, and every rule shortens the word, so the
//! result is always a fixed point.

fn is_vowel_at(chars: &[u8], i: usize) -> bool {
    match chars[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => true,
        b'y' => i > 0 && !is_vowel_at(chars, i - 1),
        _ => false,
    }
}

fn has_vowel(stem: &[u8]) -> bool {
    (0..stem.len()).any(|i| is_vowel_at(stem, i))
}

/// Number of vowel-consonant sequences in the stem.
fn measure(stem: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..stem.len() {
        let v = is_vowel_at(stem, i);
        if prev_vowel && !v {
            m += 1;
        }
        prev_vowel = v;
    }
    m
}

fn ends_cvc(stem: &[u8]) -> bool {
    let n = stem.len();
    n >= 3
        && !is_vowel_at(stem, n - 3)
        && is_vowel_at(stem, n - 2)
        && !is_vowel_at(stem, n - 1)
        && !matches!(stem[n - 1], b'w' | b'x' | b'y')
}

fn repair_stem(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel_at(b, n - 1) && !matches!(b[n - 1], b'l' | b's' | b'z')
    {
        return stem[..n - 1].to_string();
    }
    if measure(b) == 1 && ends_cvc(b) {
        return format!("{stem}e");
    }
    if n == 2 && is_vowel_at(b, 0) && !is_vowel_at(b, 1) {
        return format!("{stem}e");
    }
    stem.to_string()
}

fn step(word: &str) -> Option<String> {
    let n = word.len();
    if let Some(base) = word.strip_suffix("ies") {
        if n > 4 {
            return Some(format!("{base}y"));
        }
    }
    if let Some(base) = word.strip_suffix("ied") {
        return Some(if n > 4 {
            format!("{base}y")
        } else {
            format!("{base}ie")
        });
    }
    if let Some(base) = word.strip_suffix("es") {
        if n > 3 && ["ss", "x", "zz", "ch", "sh"].iter().any(|s| base.ends_with(s)) {
            return Some(base.to_string());
        }
    }
    if let Some(base) = word.strip_suffix('s') {
        if n > 3 && !["ss", "us", "is"].iter().any(|s| word.ends_with(s)) {
            return Some(base.to_string());
        }
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if n > 4 && stem.len() >= 2 && has_vowel(stem.as_bytes()) {
            return Some(repair_stem(stem));
        }
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if n > 3 && !word.ends_with("eed") && has_vowel(stem.as_bytes()) {
            return Some(repair_stem(stem));
        }
    }
    None
}

/// Lemma of a lowercase word. Non-ASCII words are returned unchanged.
pub fn lemmatize(word: &str) -> String {
    if !word.is_ascii() {
        return word.to_string();
    }
    let mut current = word.to_string();
    while let Some(next) = step(&current) {
        current = next;
    }
    current
}
