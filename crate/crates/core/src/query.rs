//! Decomposition of a referring expression into structured commands.
//!
//! The language-model path asks for a five-field JSON object; the heuristic
//! path is a small rule-based parser used offline and as the fallback when
//! the endpoint keeps failing.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::llm::{complete_with_retries, first_json_object, Attempt, ChatBackend, ChatMessage, ReasonerConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub candidate_entities: Vec<String>,
    pub context_entities: Vec<String>,
    pub motion_descriptor: String,
    pub posture_descriptor: String,
    pub cardinality: u32,
    pub raw_query: String,
}

impl StructuredQuery {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_entities.is_empty() {
            return Err(Error::Input("query has no candidate entities".into()));
        }
        if self.cardinality < 1 {
            return Err(Error::Input("cardinality must be at least 1".into()));
        }
        if self.raw_query.trim().is_empty() {
            return Err(Error::Input("raw query is empty".into()));
        }
        Ok(())
    }

    /// All entity nouns that grounding should look for.
    pub fn grounding_vocabulary(&self) -> Vec<String> {
        let mut v = self.candidate_entities.clone();
        for c in &self.context_entities {
            if !v.contains(c) {
                v.push(c.clone());
            }
        }
        v
    }

    /// The five-field object the decomposition prompt asks the model to emit.
    pub fn render(&self) -> String {
        json!({
            "candidates": self.candidate_entities,
            "context": self.context_entities,
            "motion": self.motion_descriptor,
            "posture": self.posture_descriptor,
            "cardinality": self.cardinality,
        })
        .to_string()
    }
}

const FIELD_NAMES: [&str; 5] = ["candidates", "context", "motion", "posture", "cardinality"];

pub fn build_decomposition_prompt(query: &str) -> Result<String> {
    if query.trim().is_empty() {
        return Err(Error::Input("query is empty".into()));
    }
    let quoted = serde_json::to_string(query).expect("string serialization cannot fail");
    Ok(format!(
        "You are a semantic parser for referring expressions that describe objects in a video.\n\
         Decompose the query into exactly five fields and reply with a single JSON object:\n\
         - \"{}\": list of noun phrases naming the kind of object being referred to (the target candidates)\n\
         - \"{}\": list of other objects mentioned only to situate the target (may be empty)\n\
         - \"{}\": the motion description of the target, verbatim from the query, or \"\"\n\
         - \"{}\": posture or visual attribute description of the target, or \"\"\n\
         - \"{}\": integer number of target objects the query refers to (1 if not stated)\n\
         Use singular nouns for entities. Do not add fields. Do not explain.\n\
         Example: {}\n\
         Query: {}\n\
         Answer:",
        FIELD_NAMES[0],
        FIELD_NAMES[1],
        FIELD_NAMES[2],
        FIELD_NAMES[3],
        FIELD_NAMES[4],
        r#"{"candidates": ["cat"], "context": ["green plate"], "motion": "motionless", "posture": "standing", "cardinality": 1}"#,
        quoted
    ))
}

fn string_list(v: Option<&Value>, field: &str) -> Result<Vec<String>> {
    let items = match v {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::String(s)) => s.split(',').map(str::to_string).collect(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Parse(format!("`{field}` entries must be strings")))
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::Parse(format!("`{field}` must be a list of strings"))),
    };
    Ok(items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

fn text_field(v: Option<&Value>, field: &str) -> Result<String> {
    match v {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        Some(Value::Array(a)) if a.iter().all(Value::is_string) => Ok(a
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(", ")),
        Some(_) => Err(Error::Parse(format!("`{field}` must be text"))),
    }
}

pub fn number_word(word: &str) -> Option<u32> {
    const WORDS: [&str; 10] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.iter().position(|w| *w == word).map(|i| i as u32 + 1)
}

fn cardinality_field(v: Option<&Value>) -> u32 {
    let k = match v {
        Some(Value::Number(n)) => n.as_u64().map(|k| k as u32),
        Some(Value::String(s)) => {
            let s = s.trim().to_lowercase();
            s.parse::<u32>().ok().or_else(|| number_word(&s))
        }
        _ => None,
    };
    k.filter(|&k| k >= 1).unwrap_or(1)
}

/// Strict parse of the model's reply. Prose around the object is tolerated.
pub fn parse_decomposition_response(text: &str, raw_query: &str) -> Result<StructuredQuery> {
    let obj_text = first_json_object(text).ok_or_else(|| Error::Parse("no JSON object in response".into()))?;
    let v: Value = serde_json::from_str(obj_text).map_err(|e| Error::Parse(format!("invalid JSON object: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("response is not an object".into()))?;
    let candidates = string_list(obj.get("candidates"), "candidates")?;
    if candidates.is_empty() {
        return Err(Error::Parse("`candidates` missing or empty".into()));
    }
    Ok(StructuredQuery {
        candidate_entities: candidates,
        context_entities: string_list(obj.get("context"), "context")?,
        motion_descriptor: text_field(obj.get("motion"), "motion")?,
        posture_descriptor: text_field(obj.get("posture"), "posture")?,
        cardinality: cardinality_field(obj.get("cardinality")),
        raw_query: raw_query.to_string(),
    })
}

// Lexicons for the rule-based parser.

const ARTICLES: &[&str] = &["the", "a", "an", "this", "that", "its", "his", "her", "their", "some"];
const FILLERS: &[&str] = &[
    "is", "are", "was", "were", "be", "being", "who", "which", "while", "and", "or", "other", "of", "to", "it",
    "there", "being",
];
const MOTION_WORDS: &[&str] = &[
    "moving",
    "moves",
    "move",
    "walking",
    "walks",
    "walk",
    "running",
    "runs",
    "run",
    "riding",
    "rides",
    "ride",
    "turning",
    "turns",
    "turn",
    "driving",
    "drives",
    "flying",
    "flies",
    "swimming",
    "swims",
    "going",
    "goes",
    "crawling",
    "rolling",
    "rolls",
    "jumping",
    "jumps",
    "left",
    "right",
    "up",
    "down",
    "forward",
    "backward",
    "backwards",
    "away",
    "around",
    "across",
    "fast",
    "quickly",
    "slowly",
    "slow",
    "stationary",
    "motionless",
    "motionlessly",
    "still",
    "static",
    "toward",
    "towards",
];
const POSTURE_WORDS: &[(&str, &str)] = &[
    ("stood", "standing"),
    ("standing", "standing"),
    ("stands", "standing"),
    ("sat", "sitting"),
    ("sitting", "sitting"),
    ("sits", "sitting"),
    ("lying", "lying"),
    ("lies", "lying"),
    ("laying", "lying"),
    ("lay", "lying"),
    ("crouching", "crouching"),
    ("kneeling", "kneeling"),
    ("leaning", "leaning"),
    ("bending", "bending"),
];
const ATTRIBUTES: &[&str] = &[
    "red", "green", "blue", "yellow", "white", "black", "brown", "gray", "grey", "orange", "pink", "purple", "golden",
    "dark", "light", "striped", "spotted", "big", "small", "large", "little", "tall", "tiny", "huge",
];
const CONTEXT_PREPOSITIONS: &[&str] = &["by", "near", "beside", "under", "above", "on", "at", "with", "behind"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Word<'a> {
    Article,
    Number(u32),
    Filler,
    Motion(&'a str),
    Posture(&'static str),
    Preposition,
    Content(&'a str),
}

fn classify(tok: &str) -> Word<'_> {
    if ARTICLES.contains(&tok) {
        return Word::Article;
    }
    if let Some(k) = tok.parse::<u32>().ok().or_else(|| number_word(tok)) {
        return Word::Number(k);
    }
    if let Some((_, p)) = POSTURE_WORDS.iter().find(|(w, _)| *w == tok) {
        return Word::Posture(p);
    }
    if MOTION_WORDS.contains(&tok) {
        return Word::Motion(match tok {
            "motionlessly" => "motionless",
            other => other,
        });
    }
    if CONTEXT_PREPOSITIONS.contains(&tok) {
        return Word::Preposition;
    }
    if FILLERS.contains(&tok) {
        return Word::Filler;
    }
    Word::Content(tok)
}

fn singularize(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["ches", "shes", "xes", "sses"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && word.len() > 2 {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

fn tokenize(query: &str) -> Vec<String> {
    query
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Deterministic rule-based decomposition. Never fails: when no entity is
/// found the whole query becomes the single candidate.
pub fn heuristic_decompose(query: &str) -> StructuredQuery {
    let tokens = tokenize(query);
    let words: Vec<Word<'_>> = tokens.iter().map(|t| classify(t)).collect();

    let mut cardinality: Option<u32> = None;
    let mut candidates: Vec<Vec<&str>> = Vec::new();
    let mut contexts: Vec<String> = Vec::new();
    let mut motion: Vec<String> = Vec::new();
    let mut posture: Vec<String> = Vec::new();

    #[derive(PartialEq)]
    enum Mode {
        SeekCandidate,
        InCandidate,
        AfterCandidate,
        SeekContext,
        InContext,
    }
    let mut mode = Mode::SeekCandidate;
    let mut context_np: Vec<&str> = Vec::new();

    let flush_context = |np: &mut Vec<&str>, contexts: &mut Vec<String>| {
        if !np.is_empty() {
            let phrase = np.join(" ");
            if !contexts.contains(&phrase) {
                contexts.push(phrase);
            }
            np.clear();
        }
    };

    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i].as_str();
        // "in front (of)" is both a relational motion cue and a locative.
        if tok == "in" && tokens.get(i + 1).map(String::as_str) == Some("front") {
            flush_context(&mut context_np, &mut contexts);
            motion.push("in front".into());
            i += 2;
            if tokens.get(i).map(String::as_str) == Some("of") {
                i += 1;
                mode = Mode::SeekContext;
            } else if mode != Mode::SeekCandidate {
                mode = Mode::AfterCandidate;
            }
            continue;
        }
        if tok == "next" && tokens.get(i + 1).map(String::as_str) == Some("to") {
            flush_context(&mut context_np, &mut contexts);
            i += 2;
            mode = Mode::SeekContext;
            continue;
        }
        match words[i] {
            Word::Article => {
                if mode == Mode::InContext {
                    flush_context(&mut context_np, &mut contexts);
                    mode = Mode::AfterCandidate;
                }
            }
            Word::Number(k) => {
                if mode == Mode::SeekCandidate && cardinality.is_none() {
                    cardinality = Some(k);
                }
            }
            Word::Filler => {
                if tok == "and" && matches!(mode, Mode::InCandidate | Mode::AfterCandidate) && i + 1 < tokens.len() {
                    // "the cat and the dog": a second candidate phrase
                    let next_is_np = tokens[i + 1..]
                        .iter()
                        .map(|t| classify(t))
                        .find(|w| !matches!(w, Word::Article | Word::Number(_)))
                        .map_or(false, |w| matches!(w, Word::Content(_)));
                    if next_is_np && mode == Mode::InCandidate {
                        mode = Mode::SeekCandidate;
                    }
                } else if mode == Mode::InContext {
                    flush_context(&mut context_np, &mut contexts);
                    mode = Mode::AfterCandidate;
                } else if mode == Mode::InCandidate {
                    mode = Mode::AfterCandidate;
                }
            }
            Word::Motion(m) => {
                if mode == Mode::InContext {
                    flush_context(&mut context_np, &mut contexts);
                }
                if matches!(mode, Mode::InCandidate | Mode::InContext | Mode::SeekContext) {
                    mode = Mode::AfterCandidate;
                }
                motion.push(m.to_string());
                if m == "toward" || m == "towards" {
                    mode = Mode::SeekContext;
                }
            }
            Word::Posture(p) => {
                if mode == Mode::InContext {
                    flush_context(&mut context_np, &mut contexts);
                }
                if mode != Mode::SeekCandidate {
                    mode = Mode::AfterCandidate;
                }
                if !posture.iter().any(|x| x == p) {
                    posture.push(p.to_string());
                }
            }
            Word::Preposition => {
                flush_context(&mut context_np, &mut contexts);
                if tok == "behind" {
                    motion.push("behind".into());
                }
                mode = Mode::SeekContext;
            }
            Word::Content(w) => match mode {
                Mode::SeekCandidate => {
                    candidates.push(Vec::new());
                    mode = Mode::InCandidate;
                    push_candidate_word(w, candidates.last_mut().unwrap(), &mut posture);
                }
                Mode::InCandidate => push_candidate_word(w, candidates.last_mut().unwrap(), &mut posture),
                Mode::SeekContext | Mode::InContext => {
                    context_np.push(w);
                    mode = Mode::InContext;
                }
                Mode::AfterCandidate => {}
            },
        }
        i += 1;
    }
    flush_context(&mut context_np, &mut contexts);

    let cardinality = cardinality.unwrap_or(1).max(1);
    let mut candidate_entities: Vec<String> = candidates
        .into_iter()
        .filter(|np| !np.is_empty())
        .map(|np| {
            let mut words: Vec<String> = np.iter().map(|w| w.to_string()).collect();
            if cardinality > 1 {
                let last = words.pop().unwrap();
                words.push(singularize(&last));
            }
            words.join(" ")
        })
        .collect();
    candidate_entities.dedup();
    if candidate_entities.is_empty() {
        candidate_entities.push(query.trim().to_string());
    }

    StructuredQuery {
        candidate_entities,
        context_entities: contexts,
        motion_descriptor: motion.join(" "),
        posture_descriptor: posture.join(" "),
        cardinality,
        raw_query: query.to_string(),
    }
}

fn push_candidate_word<'a>(w: &'a str, np: &mut Vec<&'a str>, posture: &mut Vec<String>) {
    if ATTRIBUTES.contains(&w) {
        if !posture.iter().any(|p| p == w) {
            posture.push(w.to_string());
        }
    } else {
        np.push(w);
    }
}

/// Record of how a query was decomposed, for the run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub query: StructuredQuery,
    pub used_fallback: bool,
    pub prompt: Option<String>,
    pub attempts: Vec<Attempt>,
}

/// Endpoint decomposition with retries, degrading to [`heuristic_decompose`].
pub fn decompose(query: &str, backend: Option<&dyn ChatBackend>, config: &ReasonerConfig) -> Result<Decomposition> {
    let prompt = build_decomposition_prompt(query)?;
    let Some(backend) = backend else {
        return Ok(Decomposition {
            query: heuristic_decompose(query),
            used_fallback: true,
            prompt: None,
            attempts: Vec::new(),
        });
    };
    let messages = [ChatMessage::user(prompt.clone())];
    let (parsed, attempts) = complete_with_retries(backend, &messages, &config.decoding(), config.retries, |text| {
        parse_decomposition_response(text, query)
    });
    let used_fallback = parsed.is_none();
    Ok(Decomposition {
        query: parsed.unwrap_or_else(|| heuristic_decompose(query)),
        used_fallback,
        prompt: Some(prompt),
        attempts,
    })
}
