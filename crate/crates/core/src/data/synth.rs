//! Template-based synthetic corpus for desk-scale runs.
//!
//! Every digit word and color name occurs in exactly one slot filler, so each
//! is seen in ordinary contexts but stays below half a percent of all tokens.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledExample};
use crate::numerics::rng::rng_from_seed;

/// One intent with its utterance templates. Slots are written `{type}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentTemplates {
    pub intent: String,
    pub templates: Vec<String>,
}

/// Fillers for one entity type; each filler may span several tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFillers {
    pub entity: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub intents: Vec<IntentTemplates>,
    pub slots: Vec<SlotFillers>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Grammar {
    fn default() -> Self {
        let intent = |name: &str, templates: &[&str]| IntentTemplates {
            intent: name.to_string(),
            templates: strings(templates),
        };
        let slot = |entity: &str, values: &[&str]| SlotFillers {
            entity: entity.to_string(),
            values: strings(values),
        };
        Self {
            intents: vec![
                intent(
                    "PlayMusic",
                    &[
                        "play {artist}",
                        "play some {artist} please",
                        "i want to hear {artist}",
                        "put on {playlist}",
                        "play the {playlist} playlist",
                        "can you play {artist} {datetime}",
                        "start playing {playlist}",
                        "shuffle songs by {artist}",
                    ],
                ),
                intent(
                    "GetWeather",
                    &[
                        "what is the weather in {city}",
                        "will it rain in {city} {datetime}",
                        "weather forecast for {city}",
                        "how hot will it be {datetime} in {city}",
                        "is it going to snow {datetime}",
                        "tell me the forecast in {city}",
                        "do i need an umbrella in {city} {datetime}",
                    ],
                ),
                intent(
                    "BookRestaurant",
                    &[
                        "book a table for {party_size} at a {cuisine} restaurant",
                        "reserve a {cuisine} place in {city} {datetime}",
                        "find a {cuisine} restaurant for {party_size}",
                        "i need a table for {party_size} {datetime}",
                        "make a reservation at a {cuisine} bistro in {city}",
                    ],
                ),
                intent(
                    "SetAlarm",
                    &[
                        "set an alarm {datetime}",
                        "wake me up {datetime}",
                        "remind me {datetime} to leave",
                        "create an alarm for {datetime}",
                        "alarm {datetime} please",
                    ],
                ),
                intent(
                    "AddToPlaylist",
                    &[
                        "add {artist} to {playlist}",
                        "put this song by {artist} on my {playlist} playlist",
                        "add this track to {playlist}",
                        "save {artist} to the {playlist} list",
                        "include {artist} in {playlist}",
                    ],
                ),
            ],
            slots: vec![
                slot(
                    "artist",
                    &[
                        "taylor swift", "the beatles", "miles davis", "adele", "daft punk",
                        "bob dylan", "nina simone", "kendrick lamar", "radiohead",
                        "billie holiday", "john coltrane", "the rolling stones", "frank ocean",
                        "bjork", "queen", "fleetwood mac", "pink floyd", "green day",
                        "simply red", "deep purple",
                    ],
                ),
                slot(
                    "playlist",
                    &[
                        "morning coffee", "road trip", "chill vibes", "workout mix", "rainy day",
                        "dinner jazz", "focus flow", "summer hits", "late night", "indie gems",
                        "purple haze classics", "golden oldies", "deep focus", "party starters",
                        "sunday brunch", "blue notes", "acoustic evenings", "throwback anthems",
                        "zero gravity", "yellow submarine days", "orange sunsets", "brown sugar soul",
                    ],
                ),
                slot(
                    "city",
                    &[
                        "paris", "new york", "london", "tokyo", "berlin", "chicago", "seattle",
                        "madrid", "boston", "rome", "san francisco", "lisbon", "denver", "austin",
                    ],
                ),
                slot(
                    "datetime",
                    &[
                        "tomorrow", "today", "tonight", "this weekend", "next monday",
                        "on friday", "in the morning", "at noon", "this evening", "next week",
                        "at seven", "on saturday", "sunday morning", "later today",
                        "before lunch", "after work", "on tuesday afternoon", "at midnight",
                        "at one", "at three", "at five", "at six", "at eight", "at nine",
                    ],
                ),
                slot(
                    "cuisine",
                    &[
                        "italian", "thai", "mexican", "sushi", "indian", "french", "vegan",
                        "korean", "greek", "chinese", "ethiopian", "spanish", "lilac garden",
                        "cyan bay", "magenta street", "mauve house",
                    ],
                ),
                slot(
                    "party_size",
                    &[
                        "a couple", "my family", "the whole team", "two people", "a group",
                        "my parents", "some colleagues", "the kids", "a few friends",
                        "our book club", "my coworkers", "everyone", "four of us",
                    ],
                ),
            ],
        }
    }
}

impl Grammar {
    fn fillers(&self, entity: &str) -> Result<&[String], DataError> {
        self.slots
            .iter()
            .find(|s| s.entity == entity)
            .map(|s| s.values.as_slice())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| DataError::InvalidGrammar(format!("no fillers for slot {entity}")))
    }

    fn expand(&self, template: &str, rng: &mut impl rand::Rng) -> Result<(Vec<String>, Vec<String>), DataError> {
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for word in template.split_whitespace() {
            if let Some(entity) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                let value = self.fillers(entity)?.choose(rng).expect("non-empty");
                for (i, tok) in value.split_whitespace().enumerate() {
                    tokens.push(tok.to_string());
                    tags.push(format!("{}-{entity}", if i == 0 { "B" } else { "I" }));
                }
            } else {
                tokens.push(word.to_string());
                tags.push("O".to_string());
            }
        }
        Ok((tokens, tags))
    }
}

/// `size` utterances: intent uniform, then template uniform within the intent.
pub fn synth_corpus(grammar: &Grammar, size: usize, seed: u64) -> Result<Vec<LabeledExample>, DataError> {
    if size == 0 {
        return Err(DataError::InvalidGrammar("size must be at least 1".into()));
    }
    if grammar.intents.iter().any(|i| i.templates.is_empty()) || grammar.intents.is_empty() {
        return Err(DataError::InvalidGrammar("every intent needs a template".into()));
    }
    let mut rng = rng_from_seed(seed);
    (0..size)
        .map(|_| {
            let intent = grammar.intents.choose(&mut rng).expect("non-empty");
            let template = intent.templates.choose(&mut rng).expect("non-empty");
            let (tokens, ner_tags) = grammar.expand(template, &mut rng)?;
            Ok(LabeledExample {
                tokens,
                ner_tags,
                intent: intent.intent.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{COLORS, DIGIT_WORDS};
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn deterministic_per_seed() {
        let g = Grammar::default();
        assert_eq!(synth_corpus(&g, 2000, 7).unwrap(), synth_corpus(&g, 2000, 7).unwrap());
        assert_ne!(synth_corpus(&g, 50, 7).unwrap(), synth_corpus(&g, 50, 8).unwrap());
    }

    #[test]
    fn rare_secret_tokens_and_valid_bio() {
        let g = Grammar::default();
        for seed in [7, 8, 9] {
            let corpus = synth_corpus(&g, 2000, seed).unwrap();
            let mut counts: HashMap<&str, usize> = HashMap::new();
            let mut total = 0;
            for ex in &corpus {
                ex.validate().unwrap();
                for t in &ex.tokens {
                    *counts.entry(t.as_str()).or_default() += 1;
                    total += 1;
                }
            }
            for w in COLORS.iter().chain(DIGIT_WORDS.iter()) {
                let f = *counts.get(w).unwrap_or(&0) as f64 / total as f64;
                assert!(f < 0.005, "{w} frequency {f}");
            }
        }
    }

    #[test]
    fn every_secret_token_occurs() {
        let corpus = synth_corpus(&Grammar::default(), 2000, 7).unwrap();
        let vocab: BTreeSet<_> = corpus.iter().flat_map(|e| e.tokens.iter().map(String::as_str)).collect();
        for w in COLORS.iter().chain(DIGIT_WORDS.iter()) {
            assert!(vocab.contains(w), "{w} never occurs");
        }
    }

    #[test]
    fn desk_scale_inventory() {
        let corpus = synth_corpus(&Grammar::default(), 2000, 7).unwrap();
        let vocab: BTreeSet<_> = corpus.iter().flat_map(|e| e.tokens.iter()).collect();
        let intents: BTreeSet<_> = corpus.iter().map(|e| &e.intent).collect();
        let entities: BTreeSet<_> = corpus
            .iter()
            .flat_map(|e| e.ner_tags.iter())
            .filter_map(|t| t.strip_prefix("B-"))
            .collect();
        assert!((150..=250).contains(&vocab.len()), "{}", vocab.len());
        assert_eq!(intents.len(), 5);
        assert_eq!(entities.len(), 6);
    }

    #[test]
    fn rejects_empty_request() {
        assert!(synth_corpus(&Grammar::default(), 0, 1).is_err());
    }
}
