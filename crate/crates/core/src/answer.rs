//! Extracting structured answers from free text, and formatting ground truth
//! in the answer schema the prompts ask for.
//!
//! The parsers are total: any input yields a (possibly empty) result. Later
//! mentions of the same label or axis override earlier ones, since models
//! tend to correct themselves further down a reply.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Axis, Pixel, Vec3};
use crate::tasks::GroundTruth;

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParsedAnswer {
    pub points: BTreeMap<String, Vec3>,
    /// Label → (1-based image number, pixel).
    pub pixels: BTreeMap<String, (usize, Pixel)>,
    pub ranges: BTreeMap<Axis, (f64, f64)>,
    /// 1-based image number → chosen candidate label.
    pub choices: BTreeMap<usize, String>,
    /// Diagnostic when nothing usable was found.
    pub unparsed: Option<String>,
}

impl ParsedAnswer {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.pixels.is_empty() && self.ranges.is_empty() && self.choices.is_empty()
    }
}

/// Words that are never taken as point labels even though they are short.
const STOPWORDS: &[&str] = &[
    "a", "i", "an", "as", "at", "be", "by", "do", "go", "he", "if", "in", "is", "it", "me", "my", "no", "of", "on", "or", "so", "to", "up", "us", "we", "all",
    "and", "any", "are", "but", "can", "for", "has", "her", "him", "his", "its", "may", "not", "now", "our", "out", "see", "the", "was", "who", "why", "yes",
    "you", "get", "set", "let", "new", "old", "one", "two", "use", "via", "per",
];

const CONNECTORS: &[&str] = &[
    "is",
    "at",
    "are",
    "located",
    "lies",
    "would",
    "be",
    "will",
    "was",
    "approximately",
    "roughly",
    "about",
];

const UNITS: &[&str] = &["cm", "mm", "m", "in", "units", "unit", "px"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_decoration(c: char) -> bool {
    matches!(c, '*' | '`' | '"' | '\u{201c}' | '\u{201d}' | '_')
}

fn is_minus(c: char) -> bool {
    matches!(c, '-' | '\u{2212}')
}

fn lower_eq(chars: &[char], at: usize, word: &str) -> bool {
    let mut i = at;
    for w in word.chars() {
        match chars.get(i) {
            Some(c) if c.to_ascii_lowercase() == w => i += 1,
            _ => return false,
        }
    }
    true
}

fn skip_ws(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && chars[i].is_whitespace() {
        i += 1;
    }
    i
}

/// Scans a decimal number at `i`: optional sign, digits, optional fraction.
/// No exponent. Returns the value and the index just past it.
fn scan_number(chars: &[char], i: usize) -> Option<(f64, usize)> {
    let mut j = i;
    let mut text = String::new();
    if let Some(&c) = chars.get(j) {
        if c == '+' {
            j += 1;
        } else if is_minus(c) {
            text.push('-');
            j += 1;
        }
    }
    let mut digits = 0;
    while let Some(c) = chars.get(j).filter(|c| c.is_ascii_digit()) {
        text.push(*c);
        digits += 1;
        j += 1;
    }
    if chars.get(j) == Some(&'.') && chars.get(j + 1).is_some_and(|c| c.is_ascii_digit()) {
        text.push('.');
        j += 1;
        while let Some(c) = chars.get(j).filter(|c| c.is_ascii_digit()) {
            text.push(*c);
            digits += 1;
            j += 1;
        }
    }
    if digits == 0 {
        return None;
    }
    // "1.2.3" or "12abc" are not numbers
    if chars
        .get(j)
        .is_some_and(|c| c.is_ascii_digit() || *c == '.' && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()))
    {
        return None;
    }
    text.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| (v, j))
}

/// Skips an optional unit word (`cm`, `mm`, ...) after a number.
fn skip_unit(chars: &[char], i: usize) -> usize {
    let j = skip_ws(chars, i);
    for u in UNITS {
        let end = j + u.chars().count();
        if lower_eq(chars, j, u) && !chars.get(end).is_some_and(|c| c.is_alphabetic()) {
            return end;
        }
    }
    i
}

fn number_with_unit(chars: &[char], i: usize) -> Option<(f64, usize)> {
    let i = skip_ws(chars, i);
    let (v, j) = scan_number(chars, i)?;
    Some((v, skip_unit(chars, j)))
}

/// Parses `( n , n , ... )` with exactly `arity` numbers starting at the
/// opening parenthesis `i`.
fn scan_tuple(chars: &[char], i: usize, arity: usize) -> Option<(Vec<f64>, usize)> {
    if chars.get(i) != Some(&'(') {
        return None;
    }
    let mut j = i + 1;
    let mut vals = Vec::with_capacity(arity);
    for k in 0..arity {
        let (v, next) = number_with_unit(chars, j)?;
        vals.push(v);
        j = skip_ws(chars, next);
        if k + 1 < arity {
            if chars.get(j) != Some(&',') {
                return None;
            }
            j += 1;
        }
    }
    (chars.get(j) == Some(&')')).then_some((vals, j + 1))
}

fn skip_back_ws(chars: &[char], mut i: usize) -> usize {
    while i > 0 && (chars[i - 1].is_whitespace() || is_decoration(chars[i - 1])) {
        i -= 1;
    }
    i
}

/// Word (alphanumeric run) ending at `end`, as `(start, end)`.
fn word_before(chars: &[char], end: usize) -> Option<(usize, usize)> {
    let mut s = end;
    while s > 0 && chars[s - 1].is_alphanumeric() {
        s -= 1;
    }
    (s < end).then_some((s, end))
}

/// Finds the label in front of a tuple starting at `open`: skips connector
/// words and `:`/`=`, then takes the preceding word if it is a plausible
/// label according to `accept`.
fn label_before(chars: &[char], open: usize, accept: impl Fn(&str) -> bool) -> Option<String> {
    let mut i = skip_back_ws(chars, open);
    for _ in 0..4 {
        if i > 0 && matches!(chars[i - 1], ':' | '=') {
            i = skip_back_ws(chars, i - 1);
            continue;
        }
        match word_before(chars, i) {
            Some((s, e)) => {
                let w: String = chars[s..e].iter().collect::<String>().to_lowercase();
                if CONNECTORS.contains(&w.as_str()) {
                    i = skip_back_ws(chars, s);
                    continue;
                }
                break;
            }
            None => break,
        }
    }
    let (s, e) = word_before(chars, i)?;
    if s > 0 && is_word_char(chars[s - 1]) {
        return None;
    }
    let w: String = chars[s..e].iter().collect();
    accept(&w).then(|| w.to_uppercase())
}

fn is_point_label(w: &str) -> bool {
    let n = w.chars().count();
    (1..=3).contains(&n) && w.chars().all(|c| c.is_ascii_alphabetic()) && !(n > 1 && STOPWORDS.contains(&w.to_lowercase().as_str()))
}

fn is_candidate_label(w: &str) -> bool {
    let n = w.chars().count();
    (1..=4).contains(&n)
        && w.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && w.chars().all(|c| c.is_ascii_alphanumeric())
        && !STOPWORDS.contains(&w.to_lowercase().as_str())
}

/// Label → 3D point, from occurrences like `B: (10, 0, 20)`,
/// `point C is at (1, 2, 3) cm` or `the coordinates of point C are (0, 35.5, -10)`.
/// Labels are one to three letters, matched case-insensitively and returned
/// uppercase.
pub fn parse_points(text: &str) -> BTreeMap<String, Vec3> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = BTreeMap::new();
    for i in 0..chars.len() {
        if chars[i] != '(' {
            continue;
        }
        let Some((vals, _)) = scan_tuple(&chars, i, 3) else { continue };
        if let Some(label) = label_before(&chars, i, is_point_label) {
            out.insert(label, Vec3::new(vals[0], vals[1], vals[2]));
        }
    }
    out
}

fn image_number_before(chars: &[char], open: usize) -> Option<usize> {
    // same line only
    let mut line_start = open;
    while line_start > 0 && chars[line_start - 1] != '\n' {
        line_start -= 1;
    }
    let line: String = chars[line_start..open].iter().collect::<String>().to_lowercase();
    let mut found = None;
    for key in ["image", "view"] {
        let mut from = 0;
        while let Some(pos) = line[from..].find(key) {
            let at = from + pos + key.len();
            let rest: Vec<char> = line[at..].chars().collect();
            let k = skip_ws(&rest, 0);
            let digits: String = rest[k..].iter().take_while(|c| c.is_ascii_digit()).collect();
            if let Ok(n) = digits.parse::<usize>() {
                found = Some(match found {
                    Some((p, _)) if p > at => found.unwrap(),
                    _ => (at, n),
                });
            }
            from = at;
        }
    }
    found.map(|(_, n)| n)
}

/// Label → (image number, pixel) from pixel pairs such as
/// `Image 2: P3 at (412, 230)`. The image number is taken from the nearest
/// preceding `image <n>` / `view <n>` on the same line.
pub fn parse_pixels(text: &str) -> BTreeMap<String, (usize, Pixel)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = BTreeMap::new();
    for i in 0..chars.len() {
        if chars[i] != '(' {
            continue;
        }
        let Some((vals, _)) = scan_tuple(&chars, i, 2) else { continue };
        let Some(image) = image_number_before(&chars, i) else { continue };
        let label = label_before(&chars, i, is_candidate_label).unwrap_or_else(|| format!("IMAGE{image}"));
        out.insert(label, (image, Pixel::new(vals[0], vals[1])));
    }
    out
}

const RANGE_SUFFIXES: &[&str] = &["axis", "range", "coordinates", "coordinate", "direction", "dimension", "values", "value"];

const RANGE_FILLERS: &[&str] = &[
    "from",
    "between",
    "ranges",
    "range",
    "spans",
    "span",
    "extends",
    "goes",
    "runs",
    "is",
    "lies",
    "covers",
    "values",
    "value",
    "coordinates",
    "coordinate",
    "of",
    "in",
    "the",
    "approximately",
    "roughly",
    "about",
    "around",
    "axis",
    "direction",
    "interval",
    "within",
    "approx",
    "it",
    "occupies",
    "lie",
    "extend",
    "run",
    "cover",
    "spanning",
    "ranging",
];

const RANGE_SEPARATORS: &[&str] = &["to", "and", "through", "until", "..", "-", "\u{2013}", "\u{2014}", ",", "~"];

fn match_word_list(chars: &[char], i: usize, words: &[&str]) -> Option<usize> {
    for w in words {
        let end = i + w.chars().count();
        if lower_eq(chars, i, w) {
            let alpha = w.chars().all(|c| c.is_alphabetic());
            if !alpha || !chars.get(end).is_some_and(|c| is_word_char(*c)) {
                return Some(end);
            }
        }
    }
    None
}

/// Tries to read `lo <sep> hi` (optionally bracketed) after an axis mention.
fn range_after(chars: &[char], mut i: usize) -> Option<(f64, f64)> {
    // axis suffix: "-axis", " axis", "-range", ...
    {
        let j = if chars.get(i) == Some(&'-') { i + 1 } else { skip_ws(chars, i) };
        if let Some(e) = match_word_list(chars, j, RANGE_SUFFIXES) {
            i = e;
        }
    }
    for _ in 0..8 {
        let j = skip_ws(chars, i);
        if matches!(chars.get(j), Some(':' | '=')) {
            i = j + 1;
            continue;
        }
        if let Some(e) = match_word_list(chars, j, RANGE_FILLERS) {
            i = e;
            continue;
        }
        i = j;
        break;
    }
    let i = skip_ws(chars, i);
    let (open, i) = match chars.get(i) {
        Some('[') => (Some(']'), i + 1),
        Some('(') => (Some(')'), i + 1),
        _ => (None, i),
    };
    let (lo, j) = number_with_unit(chars, i)?;
    let j = skip_ws(chars, j);
    let k = match_word_list(chars, j, RANGE_SEPARATORS)?;
    let (hi, m) = number_with_unit(chars, k)?;
    if let Some(close) = open {
        if chars.get(skip_ws(chars, m)) != Some(&close) {
            return None;
        }
    }
    Some(if lo <= hi { (lo, hi) } else { (hi, lo) })
}

/// Axis → (lo, hi), normalized so `lo <= hi`. Recognizes `X from a to b`,
/// `X: [a, b]`, `X-range a–b` and `along the X axis between a and b`.
pub fn parse_ranges(text: &str) -> BTreeMap<Axis, (f64, f64)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = BTreeMap::new();
    for i in 0..chars.len() {
        let axis = match chars[i].to_ascii_lowercase() {
            'x' => Axis::X,
            'y' => Axis::Y,
            'z' => Axis::Z,
            _ => continue,
        };
        if i > 0 && is_word_char(chars[i - 1]) {
            continue;
        }
        if chars.get(i + 1).is_some_and(|c| is_word_char(*c)) {
            continue;
        }
        if let Some(r) = range_after(&chars, i + 1) {
            out.insert(axis, r);
        }
    }
    out
}

fn is_sentence_end(chars: &[char], i: usize) -> bool {
    match chars[i] {
        '!' | '?' | '\n' => true,
        '.' => !(i > 0 && chars[i - 1].is_ascii_digit() && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())),
        _ => false,
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Clause index of every char: clauses end at sentence ends, `,`, `;` and
/// the word "but".
fn clause_ids(chars: &[char]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(chars.len());
    let mut id = 0;
    for i in 0..chars.len() {
        let but = lower_eq(chars, i, "but") && (i == 0 || !is_word_char(chars[i - 1])) && !chars.get(i + 3).is_some_and(|c| is_word_char(*c));
        if but {
            id += 1;
        }
        ids.push(id);
        if is_sentence_end(chars, i) || matches!(chars[i], ',' | ';') {
            id += 1;
        }
    }
    ids
}

/// Start positions of negating words and phrases.
fn negation_marks(chars: &[char]) -> Vec<usize> {
    let mut words: Vec<(usize, String)> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if is_token_char(chars[i]) && (i == 0 || !is_token_char(chars[i - 1])) {
            let s = i;
            while i < chars.len() && is_token_char(chars[i]) {
                i += 1;
            }
            words.push((s, chars[s..i].iter().collect::<String>().to_lowercase()));
        } else {
            i += 1;
        }
    }
    let mut marks = Vec::new();
    for (k, (pos, w)) in words.iter().enumerate() {
        let next = words.get(k + 1).map(|(_, n)| n.as_str());
        let neg = matches!(w.as_str(), "not" | "never" | "unlike" | "except" | "nor")
            || w.ends_with("n't")
            || w.ends_with("n\u{2019}t")
            || (w == "rather" && next == Some("than"))
            || (w == "instead" && next == Some("of"));
        if neg {
            marks.push(*pos);
        }
    }
    marks
}

/// The candidate the text settles on.
///
/// Candidate mentions are whole-word, case-insensitive matches. A negating
/// word ("not", "n't", "never", "unlike", "except", "nor", "rather than",
/// "instead of") rules out the next mention in its clause, or the previous
/// one when nothing follows it. Of the remaining mentions, a single distinct
/// candidate wins outright; otherwise the last mention, which sits in the
/// final sentence mentioning any candidate, decides.
pub fn parse_choice(text: &str, candidates: &[&str]) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    let lowered: Vec<Vec<char>> = candidates.iter().map(|c| c.to_lowercase().chars().collect()).collect();
    let mut mentions: Vec<(usize, usize)> = Vec::new();
    for i in 0..chars.len() {
        if i > 0 && is_word_char(chars[i - 1]) {
            continue;
        }
        for (ci, cand) in lowered.iter().enumerate() {
            if cand.is_empty() {
                continue;
            }
            let end = i + cand.len();
            let hit = end <= chars.len()
                && chars[i..end].iter().zip(cand).all(|(a, b)| a.to_lowercase().eq(core::iter::once(*b)))
                && !chars.get(end).is_some_and(|c| is_word_char(*c));
            if hit {
                mentions.push((i, ci));
            }
        }
    }
    if mentions.is_empty() {
        return None;
    }
    let clause = clause_ids(&chars);
    let mut negated = alloc::vec![false; mentions.len()];
    for m in negation_marks(&chars) {
        let c = clause[m];
        let after = mentions.iter().position(|(p, _)| *p > m && clause[*p] == c);
        let before = mentions.iter().rposition(|(p, _)| *p < m && clause[*p] == c);
        if let Some(k) = after.or(before) {
            negated[k] = true;
        }
    }
    let positive: Vec<usize> = mentions.iter().zip(&negated).filter(|(_, n)| !**n).map(|((_, c), _)| *c).collect();
    let first = *positive.first()?;
    if positive.iter().all(|c| *c == first) {
        return Some(candidates[first].to_string());
    }
    positive.last().map(|c| candidates[*c].to_string())
}

/// Parses everything a reply might contain.
pub fn parse_all(text: &str) -> ParsedAnswer {
    let mut a = ParsedAnswer {
        points: parse_points(text),
        pixels: parse_pixels(text),
        ranges: parse_ranges(text),
        ..ParsedAnswer::default()
    };
    if a.is_empty() {
        a.unparsed = Some("no recognizable coordinates, ranges or pixels".to_string());
    }
    a
}

fn fmt_num(v: f64) -> String {
    // Display gives the shortest round-trip form and never uses exponents.
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v}")
}

pub fn format_points(points: &BTreeMap<String, Vec3>) -> String {
    let mut out = String::new();
    for (label, p) in points {
        let _ = writeln!(out, "{label}: ({}, {}, {})", fmt_num(p.x), fmt_num(p.y), fmt_num(p.z));
    }
    out
}

pub fn format_ranges(ranges: &BTreeMap<Axis, (f64, f64)>) -> String {
    let mut out = String::new();
    for (axis, (lo, hi)) in ranges {
        let _ = writeln!(out, "{}: [{}, {}]", axis.name(), fmt_num(*lo), fmt_num(*hi));
    }
    out
}

/// `(1-based image number, label)` pairs.
pub fn format_choices(choices: &[(usize, String)]) -> String {
    let mut out = String::new();
    for (image, label) in choices {
        let _ = writeln!(out, "Image {image}: {label}");
    }
    out
}

/// Formats ground truth in the rigid answer schema, adding independent
/// Gaussian noise of standard deviation `sigma` to every coordinate.
/// Matching answers are labels and are never perturbed.
pub fn oracle_answer<R: Rng + ?Sized>(truth: &GroundTruth, sigma: f64, rng: &mut R) -> String {
    let mut noise = |v: f64| {
        if sigma > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            v + sigma * n
        } else {
            v
        }
    };
    match truth {
        GroundTruth::Reconstruction(points) => {
            let noisy = points.iter().map(|(l, p)| (l.clone(), Vec3::new(noise(p.x), noise(p.y), noise(p.z)))).collect();
            format_points(&noisy)
        }
        GroundTruth::Detection(b) => {
            let mut r = BTreeMap::new();
            r.insert(Axis::X, (noise(b.min.x), noise(b.max.x)));
            r.insert(Axis::Y, (noise(b.min.y), noise(b.max.y)));
            r.insert(Axis::Z, (noise(b.min.z), noise(b.max.z)));
            format_ranges(&r)
        }
        GroundTruth::Matching { targets, .. } => {
            let choices: Vec<(usize, String)> = targets.iter().map(|t| (t.image_number, t.correct.clone())).collect();
            format_choices(&choices)
        }
    }
}
