//! Tweet tokenizer feeding the bag-of-words models.
//!
//! Rules, applied to the lowercased text:
//! * a leading `rt` retweet marker and `@mentions` are dropped;
//! * URLs become their host name without a leading `www.`;
//! * `#hashtags` keep their text without the `#`;
//! * emoji become `:name:` tokens (flags use the country name);
//! * remaining words are maximal runs of alphanumerics and `_`, and words
//!   shorter than two characters are dropped.

use std::collections::HashSet;

/// Tokenizer with an optional stop-word list.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Tokenizer {
            stopwords: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    /// Parse a newline-delimited stop-word file body.
    pub fn from_stopword_text(text: &str) -> Self {
        Self::with_stopwords(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lowered = text.to_lowercase();
        let mut out = Vec::new();
        for (pos, chunk) in lowered.split_whitespace().enumerate() {
            if pos == 0 && chunk == "rt" {
                continue;
            }
            if chunk.starts_with('@') {
                continue;
            }
            if let Some(host) = url_host(chunk) {
                out.push(host);
                continue;
            }
            split_chunk(chunk, &mut out);
        }
        if !self.stopwords.is_empty() {
            out.retain(|t| !self.stopwords.contains(t));
        }
        out
    }
}

/// Tokenize with the default rules and no stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::new().tokenize(text)
}

/// Host of a URL-looking chunk, without a leading `www.`.
pub fn url_host(chunk: &str) -> Option<String> {
    let candidate = if chunk.starts_with("http://") || chunk.starts_with("https://") {
        chunk.to_string()
    } else if chunk.starts_with("www.") {
        format!("http://{chunk}")
    } else {
        return None;
    };
    let parsed = url::Url::parse(&candidate).ok()?;
    let host = parsed.host_str()?.to_lowercase();
    Some(host.strip_prefix("www.").unwrap_or(&host).to_string())
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if word.chars().count() >= 2 {
            out.push(std::mem::take(word));
        } else {
            word.clear();
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_regional_indicator(c) {
            flush(&mut word, out);
            if i + 1 < chars.len() && is_regional_indicator(chars[i + 1]) {
                out.push(flag_token(c, chars[i + 1]));
                i += 2;
            } else {
                i += 1;
            }
            continue;
        }
        if is_emoji(c) {
            flush(&mut word, out);
            out.push(emoji_token(c));
        } else if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, out);
        }
        i += 1;
    }
    flush(&mut word, out);
}

fn is_regional_indicator(c: char) -> bool {
    ('\u{1F1E6}'..='\u{1F1FF}').contains(&c)
}

fn is_emoji(c: char) -> bool {
    matches!(c,
        '\u{1F300}'..='\u{1F3FA}'
        | '\u{1F400}'..='\u{1F64F}'
        | '\u{1F680}'..='\u{1F6FF}'
        | '\u{1F900}'..='\u{1F9FF}'
        | '\u{1FA70}'..='\u{1FAFF}'
        | '\u{2600}'..='\u{27BF}'
        | '\u{2B50}' | '\u{2B55}' | '\u{203C}' | '\u{2049}')
}

const EMOJI_NAMES: &[(char, &str)] = &[
    ('\u{1F602}', "face_with_tears_of_joy"),
    ('\u{1F923}', "rolling_on_the_floor_laughing"),
    ('\u{1F600}', "grinning_face"),
    ('\u{1F609}', "winking_face"),
    ('\u{1F60D}', "smiling_face_with_heart-eyes"),
    ('\u{1F621}', "pouting_face"),
    ('\u{1F620}', "angry_face"),
    ('\u{1F631}', "face_screaming_in_fear"),
    ('\u{1F914}', "thinking_face"),
    ('\u{1F44D}', "thumbs_up"),
    ('\u{1F44E}', "thumbs_down"),
    ('\u{1F44F}', "clapping_hands"),
    ('\u{1F447}', "backhand_index_pointing_down"),
    ('\u{1F449}', "backhand_index_pointing_right"),
    ('\u{1F64F}', "folded_hands"),
    ('\u{1F525}', "fire"),
    ('\u{1F534}', "red_circle"),
    ('\u{1F535}', "blue_circle"),
    ('\u{1F4A5}', "collision"),
    ('\u{1F4A9}', "pile_of_poo"),
    ('\u{1F6A8}', "police_car_light"),
    ('\u{1F4E2}', "loudspeaker"),
    ('\u{1F4F0}', "newspaper"),
    ('\u{2764}', "red_heart"),
    ('\u{2705}', "check_mark_button"),
    ('\u{274C}', "cross_mark"),
    ('\u{26A0}', "warning"),
    ('\u{2B50}', "star"),
    ('\u{203C}', "double_exclamation_mark"),
];

fn emoji_token(c: char) -> String {
    EMOJI_NAMES
        .iter()
        .find(|(e, _)| *e == c)
        .map(|(_, name)| format!(":{name}:"))
        .unwrap_or_else(|| format!(":u{:x}:", c as u32))
}

const FLAG_NAMES: &[(&str, &str)] = &[
    ("fr", "france"),
    ("us", "united_states"),
    ("gb", "united_kingdom"),
    ("ru", "russia"),
    ("de", "germany"),
    ("rs", "serbia"),
    ("it", "italy"),
    ("es", "spain"),
    ("ua", "ukraine"),
    ("eu", "european_union"),
    ("ca", "canada"),
    ("be", "belgium"),
    ("ch", "switzerland"),
    ("cn", "china"),
    ("ir", "iran"),
    ("sy", "syria"),
    ("tr", "turkey"),
    ("il", "israel"),
];

fn flag_token(a: char, b: char) -> String {
    let letter = |c: char| (b'a' + (c as u32 - 0x1F1E6) as u8) as char;
    let code: String = [letter(a), letter(b)].iter().collect();
    FLAG_NAMES
        .iter()
        .find(|(cc, _)| *cc == code)
        .map(|(_, name)| format!(":{name}:"))
        .unwrap_or_else(|| format!(":flag_{code}:"))
}
