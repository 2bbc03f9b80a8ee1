//! Toy air-travel slot grammar used by the synthetic corpus generator.
//!
//! Templates interleave fixed carrier words with slots. Slot fillers can span
//! multiple tokens ("las vegas"), which produces B-/I- label continuations.
//! The slot schema covers fromloc.city_name, toloc.city_name,
//! stoploc.city_name, depart_time.time and airline_name, and templates are
//! written so that spoken order frequently disagrees with the alphabetic
//! order of the label names.

use crate::error::{Result, SluError};

pub const LABEL_NAMES: [&str; 5] = [
    "airline_name",
    "depart_time.time",
    "fromloc.city_name",
    "stoploc.city_name",
    "toloc.city_name",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    FromLoc,
    ToLoc,
    StopLoc,
    DepartTime,
    Airline,
}

impl SlotKind {
    pub fn label_name(self) -> &'static str {
        match self {
            SlotKind::FromLoc => "fromloc.city_name",
            SlotKind::ToLoc => "toloc.city_name",
            SlotKind::StopLoc => "stoploc.city_name",
            SlotKind::DepartTime => "depart_time.time",
            SlotKind::Airline => "airline_name",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Tok {
    W(&'static str),
    S(SlotKind),
}

pub struct Template {
    pub intent: &'static str,
    pub toks: &'static [Tok],
}

impl Template {
    pub fn entity_count(&self) -> usize {
        self.toks.iter().filter(|t| matches!(t, Tok::S(_))).count()
    }
}

use SlotKind::*;
use Tok::*;

pub static TEMPLATES: &[Template] = &[
    // flight
    Template {
        intent: "flight",
        toks: &[
            W("i"),
            W("want"),
            W("a"),
            W("flight"),
            W("to"),
            S(ToLoc),
            W("from"),
            S(FromLoc),
        ],
    },
    Template {
        intent: "flight",
        toks: &[
            W("i"),
            W("want"),
            W("a"),
            W("flight"),
            W("to"),
            S(ToLoc),
            W("from"),
            S(FromLoc),
            W("that"),
            W("makes"),
            W("a"),
            W("stop"),
            W("in"),
            S(StopLoc),
        ],
    },
    Template {
        intent: "flight",
        toks: &[
            W("show"),
            W("me"),
            W("flights"),
            W("from"),
            S(FromLoc),
            W("to"),
            S(ToLoc),
            W("on"),
            S(Airline),
        ],
    },
    Template {
        intent: "flight",
        toks: &[
            W("list"),
            W("flights"),
            W("to"),
            S(ToLoc),
            W("from"),
            S(FromLoc),
            W("leaving"),
            W("at"),
            S(DepartTime),
            W("on"),
            S(Airline),
        ],
    },
    Template {
        intent: "flight",
        toks: &[
            W("are"),
            W("there"),
            W("flights"),
            W("to"),
            S(ToLoc),
            W("leaving"),
            W("at"),
            S(DepartTime),
        ],
    },
    Template {
        intent: "flight",
        toks: &[
            W("book"),
            W("me"),
            W("a"),
            W("seat"),
            W("on"),
            S(Airline),
            W("to"),
            S(ToLoc),
            W("from"),
            S(FromLoc),
        ],
    },
    Template {
        intent: "flight",
        toks: &[
            W("i"),
            W("need"),
            W("to"),
            W("fly"),
            W("to"),
            S(ToLoc),
            W("stopping"),
            W("in"),
            S(StopLoc),
            W("at"),
            S(DepartTime),
        ],
    },
    // airfare
    Template {
        intent: "airfare",
        toks: &[
            W("what"),
            W("is"),
            W("the"),
            W("fare"),
            W("from"),
            S(FromLoc),
            W("to"),
            S(ToLoc),
        ],
    },
    Template {
        intent: "airfare",
        toks: &[
            W("how"),
            W("much"),
            W("does"),
            S(Airline),
            W("charge"),
            W("to"),
            S(ToLoc),
        ],
    },
    Template {
        intent: "airfare",
        toks: &[
            W("show"),
            W("me"),
            W("the"),
            W("cost"),
            W("to"),
            S(ToLoc),
            W("from"),
            S(FromLoc),
            W("on"),
            S(Airline),
        ],
    },
    Template {
        intent: "airfare",
        toks: &[
            W("what"),
            W("does"),
            W("a"),
            W("ticket"),
            W("to"),
            S(ToLoc),
            W("from"),
            S(FromLoc),
            W("at"),
            S(DepartTime),
            W("cost"),
        ],
    },
    // ground_service
    Template {
        intent: "ground_service",
        toks: &[
            W("what"),
            W("ground"),
            W("transportation"),
            W("is"),
            W("there"),
            W("in"),
            S(ToLoc),
        ],
    },
    Template {
        intent: "ground_service",
        toks: &[
            W("show"),
            W("me"),
            W("car"),
            W("service"),
            W("in"),
            S(ToLoc),
            W("at"),
            S(DepartTime),
        ],
    },
];

/// Carrier words used across all templates, in first-appearance order.
pub fn carrier_words() -> Vec<String> {
    let mut seen = Vec::new();
    for t in TEMPLATES {
        for tok in t.toks {
            if let W(w) = tok {
                if !seen.iter().any(|s: &String| s == w) {
                    seen.push((*w).to_string());
                }
            }
        }
    }
    seen
}

const CITY_POOL: &[&str] = &[
    "dallas",
    "las vegas",
    "reno",
    "new york",
    "boston",
    "san francisco",
    "denver",
    "salt lake",
    "atlanta",
    "kansas city",
    "chicago",
    "long beach",
    "seattle",
    "santa fe",
    "memphis",
    "el paso",
    "tucson",
    "baton rouge",
    "omaha",
    "saint louis",
];

const TIME_POOL: &[&str] = &[
    "morning",
    "noon",
    "nine am",
    "evening",
    "ten am",
    "midnight",
    "four pm",
    "night",
    "six thirty",
    "seven fifteen",
];

const AIRLINE_POOL: &[&str] = &[
    "delta",
    "united",
    "american",
    "alaska",
    "lufthansa",
    "qantas",
    "air canada",
    "jet blue",
];

fn pool(base: &[&str], n: usize, synth_prefix: &str) -> Vec<Vec<String>> {
    (0..n)
        .map(|i| {
            if i < base.len() {
                base[i].split(' ').map(str::to_string).collect()
            } else {
                vec![format!("{synth_prefix}{i}")]
            }
        })
        .collect()
}

/// Filler inventories for each slot kind; each filler is a token sequence.
pub struct SlotPools {
    pub cities: Vec<Vec<String>>,
    pub times: Vec<Vec<String>>,
    pub airlines: Vec<Vec<String>>,
}

impl SlotPools {
    pub fn build(n_cities: usize, n_times: usize, n_airlines: usize) -> SlotPools {
        SlotPools {
            cities: pool(CITY_POOL, n_cities, "springfield"),
            times: pool(TIME_POOL, n_times, "oclock"),
            airlines: pool(AIRLINE_POOL, n_airlines, "skyways"),
        }
    }

    pub fn for_slot(&self, kind: SlotKind) -> &[Vec<String>] {
        match kind {
            SlotKind::FromLoc | SlotKind::ToLoc | SlotKind::StopLoc => &self.cities,
            SlotKind::DepartTime => &self.times,
            SlotKind::Airline => &self.airlines,
        }
    }
}

pub fn supported_intents() -> Vec<&'static str> {
    let mut out = Vec::new();
    for t in TEMPLATES {
        if !out.contains(&t.intent) {
            out.push(t.intent);
        }
    }
    out
}

pub fn templates_for(intent: &str, min_entities: usize) -> Vec<&'static Template> {
    TEMPLATES
        .iter()
        .filter(|t| t.intent == intent && t.entity_count() >= min_entities)
        .collect()
}

pub fn validate_intents(intents: &[String]) -> Result<()> {
    if intents.is_empty() {
        return Err(SluError::validation("intents", "must not be empty"));
    }
    let supported = supported_intents();
    for i in intents {
        if !supported.contains(&i.as_str()) {
            return Err(SluError::validation(
                "intents",
                format!("unknown intent `{i}`; supported: {supported:?}"),
            ));
        }
    }
    if !intents
        .iter()
        .any(|i| !templates_for(i, 3).is_empty())
    {
        return Err(SluError::validation(
            "intents",
            "at least one intent with 3-entity templates is required",
        ));
    }
    Ok(())
}
