//! Minimal English grapheme-to-phoneme conversion for the reference
//! phonemizer. A short lexicon covers common words; everything else goes
//! through letter rules. Good enough to drive the pipeline offline, not a
//! substitute for a real phonemizer.

const LEXICON: &[(&str, &[&str])] = &[
    ("a", &["ə"]),
    ("the", &["ð", "ə"]),
    ("hello", &["h", "ə", "l", "o"]),
    ("world", &["w", "ɜ", "ɹ", "l", "d"]),
    ("map", &["m", "æ", "p"]),
    ("mom", &["m", "ɑ", "m"]),
    ("bob", &["b", "ɑ", "b"]),
    ("pop", &["p", "ɑ", "p"]),
    ("we", &["w", "i"]),
    ("see", &["s", "i"]),
    ("she", &["ʃ", "i"]),
    ("go", &["g", "o"]),
    ("no", &["n", "o"]),
    ("so", &["s", "o"]),
    ("to", &["t", "u"]),
    ("is", &["ɪ", "z"]),
    ("it", &["ɪ", "t"]),
    ("of", &["ə", "v"]),
    ("and", &["æ", "n", "d"]),
    ("you", &["j", "u"]),
    ("very", &["v", "ɛ", "ɹ", "i"]),
    ("fish", &["f", "ɪ", "ʃ"]),
    ("cat", &["k", "æ", "t"]),
    ("more", &["m", "o", "ɹ"]),
];

/// Converts one word (case-insensitive, punctuation ignored) to IPA symbols.
pub fn word_to_phonemes(word: &str) -> Vec<String> {
    let cleaned: String = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if let Some((_, phones)) = LEXICON.iter().find(|(w, _)| *w == cleaned) {
        return phones.iter().map(|p| p.to_string()).collect();
    }
    letter_rules(&cleaned)
}

fn letter_rules(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    // silent final e after a consonant
    let len = if chars.len() > 2 && chars[chars.len() - 1] == 'e' && !is_vowel(chars[chars.len() - 2]) {
        chars.len() - 1
    } else {
        chars.len()
    };

    let mut out: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < len {
        let next = chars.get(i + 1).copied().filter(|_| i + 1 < len);
        let digraph = match (chars[i], next) {
            ('s', Some('h')) => Some("ʃ"),
            ('c', Some('h')) => Some("tʃ"),
            ('t', Some('h')) => Some("θ"),
            ('n', Some('g')) => Some("ŋ"),
            ('p', Some('h')) => Some("f"),
            ('w', Some('h')) => Some("w"),
            ('c', Some('k')) => Some("k"),
            ('e', Some('e')) | ('e', Some('a')) => Some("i"),
            ('o', Some('o')) => Some("u"),
            ('o', Some('a')) | ('o', Some('w')) => Some("o"),
            ('a', Some('y')) | ('a', Some('i')) => Some("eɪ"),
            _ => None,
        };
        if let Some(p) = digraph {
            out.push(p);
            i += 2;
            continue;
        }
        let p = match chars[i] {
            'a' => "æ",
            'e' => "ɛ",
            'i' => "ɪ",
            'o' => "o",
            'u' => "ʌ",
            'y' if i == 0 => "j",
            'y' => "i",
            'r' => "ɹ",
            'c' | 'q' => "k",
            'j' => "dʒ",
            'x' => "ks",
            'b' => "b",
            'd' => "d",
            'f' => "f",
            'g' => "g",
            'h' => "h",
            'k' => "k",
            'l' => "l",
            'm' => "m",
            'n' => "n",
            'p' => "p",
            's' => "s",
            't' => "t",
            'v' => "v",
            'w' => "w",
            'z' => "z",
            _ => "",
        };
        // doubled consonants collapse
        if !p.is_empty() && !(i > 0 && chars[i - 1] == chars[i] && !is_vowel(chars[i])) {
            out.push(p);
        }
        i += 1;
    }
    out.into_iter().map(String::from).collect()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}
