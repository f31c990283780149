//! A small synthetic world for desk-scale experiments.
//!
//! The world has entity pools, a lexicon of predicates (ten relations plus
//! relation-free "neutral" predicates and a few extras), and for each
//! predicate several syntactic realizations with hand-written dependency
//! structure. From it we generate parsed training corpora and few-shot
//! benchmarks whose relations are spread over two disjoint pools.

use std::collections::BTreeSet;
use std::sync::{Arc, LazyLock};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, DepEdge, EntitySpan, RelationInstance, OUTSIDE};
use crate::episode::{Episode, NO_RELATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pool {
    Person,
    Company,
    School,
    Group,
    City,
    Country,
    Date,
}

impl Pool {
    pub fn etype(self) -> &'static str {
        match self {
            Pool::Person => "per",
            Pool::Company | Pool::School | Pool::Group => "org",
            Pool::City => "city",
            Pool::Country => "country",
            Pool::Date => "date",
        }
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            Pool::Person => &[],
            Pool::Company => COMPANIES,
            Pool::School => SCHOOLS,
            Pool::Group => GROUPS,
            Pool::City => CITIES,
            Pool::Country => COUNTRIES,
            Pool::Date => &[],
        }
    }
}

const FIRST_NAMES: &[&str] = &[
    "John", "Maria", "David", "Sarah", "Michael", "Laura", "James", "Elena", "Robert", "Anna",
    "Thomas", "Julia", "Daniel", "Sofia", "Peter", "Clara", "Mark", "Nina", "Paul", "Olga",
    "Victor", "Irene", "Hugo", "Lena", "Oscar", "Rita", "Felix", "Vera", "Omar", "Alice",
];

const LAST_NAMES: &[&str] = &[
    "Smith", "Garcia", "Chen", "Novak", "Okafor", "Larsen", "Rossi", "Tanaka", "Kowalski",
    "Dubois", "Haddad", "Moreau", "Silva", "Petrov", "Jensen", "Murphy", "Weber", "Sato",
    "Costa", "Nguyen", "Fischer", "Romero", "Berg", "Ivanova", "Khan", "Lopez", "Meyer", "Park",
    "Quinn", "Walsh",
];

const COMPANIES: &[&str] = &[
    "Acme Corp", "Globex", "Initech", "Umbrella Group", "Stark Industries", "Wayne Enterprises",
    "Cyberdyne Systems", "Tyrell Corporation", "Hooli", "Vandelay Imports", "Pied Piper",
    "Soylent", "Wonka Foods", "Oscorp", "Massive Dynamic", "Nakatomi Trading", "Gringotts",
    "Monarch Solutions", "Aperture Science", "Black Mesa", "Virtucon", "Gekko Partners",
    "Dunder Mifflin", "Sterling Cooper", "Bluth Company", "Duff Brewing", "Northwind Traders",
    "Contoso", "Fabrikam", "Tailspin Toys", "Litware", "Adatum", "Proseware",
    "Lucerne Publishing", "Halcyon Labs", "Zenith Motors", "Orion Pharma", "Vortex Media",
];

const SCHOOLS: &[&str] = &[
    "Oxford", "Harvard", "Stanford", "Yale", "Princeton", "Cambridge", "Columbia University",
    "Cornell", "Duke University", "Sorbonne", "Caltech", "Brown University", "Rice University",
    "Tufts", "Dartmouth",
];

const GROUPS: &[&str] = &[
    "Mercosur", "Nordic Council", "Pacific Alliance", "Trade League", "Energy Forum", "OPEC",
    "Arctic Council", "Tech Coalition", "Green Consortium", "Steel Association", "Maritime Union",
    "Retail Federation",
];

const CITIES: &[&str] = &[
    "Boston", "Chicago", "New York City", "Paris", "Berlin", "Tokyo", "Madrid", "Toronto",
    "San Francisco", "Los Angeles", "Seattle", "Denver", "Lyon", "Osaka", "Munich", "Dublin",
    "Vienna", "Lisbon", "Prague", "Oslo", "Austin", "Miami", "Sydney", "Zurich",
];

const COUNTRIES: &[&str] = &[
    "France", "Japan", "Germany", "Canada", "Brazil", "India", "Italy", "Spain", "Mexico", "Kenya",
    "Norway", "Chile", "South Korea", "New Zealand", "Egypt", "Poland", "Sweden", "Vietnam",
    "Peru", "Ireland",
];

const MONTHS: &[&str] = &["January", "March", "May", "July", "September", "November"];

/// Syntactic construction of a clause linking a first (X) and second (Y)
/// entity, in surface order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// `X verb Y`
    Active { verb: &'static str },
    /// `X aux verb by Y`
    Passive { aux: &'static str, verb: &'static str },
    /// `X verb prep Y`
    PrepVerb { verb: &'static str, prep: &'static str },
    /// `X aux verb prep Y`
    PassivePrep {
        aux: &'static str,
        verb: &'static str,
        prep: &'static str,
    },
    /// `X is det noun prep Y`
    Copula {
        det: &'static str,
        noun: &'static str,
        prep: &'static str,
    },
    /// `X , det noun prep Y , tail`
    Appos {
        det: &'static str,
        noun: &'static str,
        prep: &'static str,
    },
    /// `X , verb prep Y , tail`
    Acl { verb: &'static str, prep: &'static str },
    /// `X verb det obj prep Y`
    HasObj {
        verb: &'static str,
        det: &'static str,
        obj: &'static str,
        prep: &'static str,
    },
}

impl Frame {
    pub fn has_tail(self) -> bool {
        matches!(self, Frame::Appos { .. } | Frame::Acl { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Realization {
    pub frame: Frame,
    /// Whether argument A fills the X slot.
    pub a_first: bool,
}

#[derive(Debug)]
pub struct Predicate {
    pub name: &'static str,
    /// Relation label, or `None` for predicates that express no target relation.
    pub relation: Option<&'static str>,
    pub a: Pool,
    pub b: Pool,
    /// Whether the relation subject is argument A.
    pub subj_is_a: bool,
    pub realizations: &'static [Realization],
}

const fn fwd(frame: Frame) -> Realization {
    Realization { frame, a_first: true }
}

const fn rev(frame: Frame) -> Realization {
    Realization {
        frame,
        a_first: false,
    }
}

const fn act(verb: &'static str) -> Frame {
    Frame::Active { verb }
}

const fn pass(aux: &'static str, verb: &'static str) -> Frame {
    Frame::Passive { aux, verb }
}

const fn prep(verb: &'static str, prep: &'static str) -> Frame {
    Frame::PrepVerb { verb, prep }
}

const fn ppass(aux: &'static str, verb: &'static str, prep: &'static str) -> Frame {
    Frame::PassivePrep { aux, verb, prep }
}

const fn cop(det: &'static str, noun: &'static str, prep: &'static str) -> Frame {
    Frame::Copula { det, noun, prep }
}

const fn appos(det: &'static str, noun: &'static str, prep: &'static str) -> Frame {
    Frame::Appos { det, noun, prep }
}

const fn acl(verb: &'static str, prep: &'static str) -> Frame {
    Frame::Acl { verb, prep }
}

const fn has(verb: &'static str, det: &'static str, obj: &'static str, prep: &'static str) -> Frame {
    Frame::HasObj { verb, det, obj, prep }
}

pub static FOUNDED_BY: Predicate = Predicate {
    name: "org:founded_by",
    relation: Some("org:founded_by"),
    a: Pool::Person,
    b: Pool::Company,
    subj_is_a: false,
    realizations: &[
        fwd(act("founded")),
        fwd(act("established")),
        fwd(act("started")),
        fwd(act("created")),
        rev(pass("was", "founded")),
        rev(pass("was", "established")),
        rev(pass("was", "created")),
        fwd(cop("the", "founder", "of")),
        fwd(cop("a", "co-founder", "of")),
        fwd(cop("the", "creator", "of")),
        fwd(appos("the", "founder", "of")),
        fwd(appos("a", "co-founder", "of")),
    ],
};

pub static TOP_MEMBERS: Predicate = Predicate {
    name: "org:top_members",
    relation: Some("org:top_members"),
    a: Pool::Person,
    b: Pool::Company,
    subj_is_a: false,
    realizations: &[
        fwd(act("heads")),
        fwd(act("leads")),
        fwd(act("runs")),
        fwd(act("chairs")),
        rev(pass("is", "led")),
        rev(pass("is", "headed")),
        rev(pass("is", "run")),
        fwd(cop("the", "chairman", "of")),
        fwd(cop("the", "president", "of")),
        fwd(cop("the", "CEO", "of")),
        fwd(cop("the", "director", "of")),
        fwd(appos("the", "chairman", "of")),
        fwd(appos("the", "CEO", "of")),
    ],
};

pub static ORG_PARENTS: Predicate = Predicate {
    name: "org:parents",
    relation: Some("org:parents"),
    a: Pool::Company,
    b: Pool::Company,
    subj_is_a: false,
    realizations: &[
        rev(cop("a", "subsidiary", "of")),
        rev(cop("a", "unit", "of")),
        rev(cop("a", "division", "of")),
        rev(cop("an", "affiliate", "of")),
        fwd(act("owns")),
        fwd(act("controls")),
        rev(pass("is", "owned")),
        rev(pass("is", "controlled")),
        rev(appos("a", "subsidiary", "of")),
        rev(appos("a", "unit", "of")),
        rev(appos("a", "division", "of")),
    ],
};

pub static MEMBER_OF: Predicate = Predicate {
    name: "org:member_of",
    relation: Some("org:member_of"),
    a: Pool::Company,
    b: Pool::Group,
    subj_is_a: true,
    realizations: &[
        fwd(act("joined")),
        fwd(act("entered")),
        fwd(prep("belongs", "to")),
        fwd(prep("participates", "in")),
        fwd(cop("a", "member", "of")),
        fwd(cop("", "part", "of")),
        fwd(cop("a", "participant", "in")),
        fwd(ppass("is", "affiliated", "with")),
        fwd(ppass("is", "registered", "with")),
        fwd(appos("a", "member", "of")),
    ],
};

pub static HEADQUARTERS: Predicate = Predicate {
    name: "org:country_of_headquarters",
    relation: Some("org:country_of_headquarters"),
    a: Pool::Company,
    b: Pool::Country,
    subj_is_a: true,
    realizations: &[
        fwd(ppass("is", "based", "in")),
        fwd(ppass("is", "headquartered", "in")),
        fwd(ppass("is", "located", "in")),
        fwd(ppass("is", "incorporated", "in")),
        fwd(has("has", "its", "headquarters", "in")),
        fwd(has("keeps", "its", "headquarters", "in")),
        fwd(acl("based", "in")),
        fwd(acl("headquartered", "in")),
        fwd(acl("located", "in")),
        fwd(prep("operates", "from")),
    ],
};

pub static EMPLOYEE_OF: Predicate = Predicate {
    name: "per:employee_of",
    relation: Some("per:employee_of"),
    a: Pool::Person,
    b: Pool::Company,
    subj_is_a: true,
    realizations: &[
        fwd(prep("works", "for")),
        fwd(prep("works", "at")),
        fwd(act("joined")),
        rev(act("employs")),
        fwd(pass("was", "hired")),
        fwd(pass("is", "employed")),
        fwd(cop("an", "engineer", "at")),
        fwd(cop("an", "employee", "of")),
        fwd(cop("a", "spokesman", "for")),
        fwd(cop("an", "analyst", "at")),
        fwd(appos("a", "spokesman", "for")),
        fwd(appos("an", "analyst", "at")),
    ],
};

pub static CITY_OF_RESIDENCE: Predicate = Predicate {
    name: "per:city_of_residence",
    relation: Some("per:city_of_residence"),
    a: Pool::Person,
    b: Pool::City,
    subj_is_a: true,
    realizations: &[
        fwd(prep("lives", "in")),
        fwd(prep("resides", "in")),
        fwd(prep("moved", "to")),
        fwd(prep("relocated", "to")),
        fwd(prep("settled", "in")),
        fwd(prep("stays", "in")),
        fwd(cop("a", "resident", "of")),
        fwd(appos("a", "resident", "of")),
        fwd(has("has", "a", "home", "in")),
        fwd(has("owns", "a", "house", "in")),
        fwd(has("rents", "an", "apartment", "in")),
    ],
};

pub static SPOUSE: Predicate = Predicate {
    name: "per:spouse",
    relation: Some("per:spouse"),
    a: Pool::Person,
    b: Pool::Person,
    subj_is_a: true,
    realizations: &[
        fwd(act("married")),
        fwd(act("wed")),
        fwd(cop("the", "wife", "of")),
        fwd(cop("the", "husband", "of")),
        fwd(cop("the", "spouse", "of")),
        fwd(appos("the", "wife", "of")),
        fwd(appos("the", "husband", "of")),
        fwd(ppass("is", "married", "to")),
        fwd(cop("the", "widow", "of")),
        fwd(appos("the", "spouse", "of")),
        fwd(prep("eloped", "with")),
    ],
};

pub static SCHOOLS_ATTENDED: Predicate = Predicate {
    name: "per:schools_attended",
    relation: Some("per:schools_attended"),
    a: Pool::Person,
    b: Pool::School,
    subj_is_a: true,
    realizations: &[
        fwd(prep("graduated", "from")),
        fwd(prep("studied", "at")),
        fwd(act("attended")),
        fwd(cop("a", "graduate", "of")),
        fwd(cop("an", "alumnus", "of")),
        fwd(cop("a", "student", "at")),
        fwd(appos("a", "graduate", "of")),
        fwd(ppass("is", "enrolled", "at")),
        fwd(has("earned", "a", "degree", "from")),
        fwd(has("got", "his", "degree", "from")),
        fwd(appos("an", "alumnus", "of")),
    ],
};

pub static PER_PARENTS: Predicate = Predicate {
    name: "per:parents",
    relation: Some("per:parents"),
    a: Pool::Person,
    b: Pool::Person,
    subj_is_a: true,
    realizations: &[
        fwd(cop("the", "son", "of")),
        fwd(cop("the", "daughter", "of")),
        fwd(cop("the", "child", "of")),
        rev(cop("the", "father", "of")),
        rev(cop("the", "mother", "of")),
        rev(cop("the", "parent", "of")),
        fwd(pass("was", "raised")),
        fwd(appos("the", "son", "of")),
        rev(appos("the", "father", "of")),
    ],
};

pub static VISITED: Predicate = Predicate {
    name: "visited",
    relation: None,
    a: Pool::Person,
    b: Pool::Company,
    subj_is_a: true,
    realizations: &[
        fwd(act("visited")),
        fwd(act("toured")),
        fwd(prep("went", "to")),
        fwd(cop("a", "visitor", "to")),
    ],
};

pub static CRITICIZED: Predicate = Predicate {
    name: "criticized",
    relation: None,
    a: Pool::Person,
    b: Pool::Company,
    subj_is_a: true,
    realizations: &[
        fwd(act("criticized")),
        fwd(act("attacked")),
        fwd(act("blamed")),
        rev(pass("was", "criticized")),
        fwd(prep("complained", "about")),
        fwd(appos("a", "critic", "of")),
    ],
};

pub static SUED: Predicate = Predicate {
    name: "sued",
    relation: None,
    a: Pool::Company,
    b: Pool::Company,
    subj_is_a: true,
    realizations: &[
        fwd(act("sued")),
        fwd(act("accused")),
        rev(pass("was", "sued")),
        fwd(has("filed", "a", "lawsuit", "against")),
    ],
};

pub static COMPETES: Predicate = Predicate {
    name: "competes",
    relation: None,
    a: Pool::Company,
    b: Pool::Company,
    subj_is_a: true,
    realizations: &[
        fwd(prep("competes", "with")),
        fwd(act("rivals")),
        fwd(cop("a", "rival", "of")),
        fwd(cop("a", "competitor", "of")),
        fwd(appos("a", "rival", "of")),
    ],
};

pub static PARTNERED: Predicate = Predicate {
    name: "partnered",
    relation: None,
    a: Pool::Company,
    b: Pool::Company,
    subj_is_a: true,
    realizations: &[
        fwd(prep("partnered", "with")),
        fwd(prep("cooperates", "with")),
        fwd(cop("a", "partner", "of")),
        fwd(appos("a", "partner", "of")),
        fwd(has("signed", "a", "deal", "with")),
    ],
};

pub static INVESTED: Predicate = Predicate {
    name: "invested",
    relation: None,
    a: Pool::Company,
    b: Pool::Country,
    subj_is_a: true,
    realizations: &[
        fwd(prep("invested", "in")),
        fwd(prep("expanded", "into")),
        fwd(prep("exports", "to")),
        fwd(has("opened", "an", "office", "in")),
        fwd(has("sells", "its", "products", "in")),
    ],
};

pub static VISITED_CITY: Predicate = Predicate {
    name: "visited_city",
    relation: None,
    a: Pool::Person,
    b: Pool::City,
    subj_is_a: true,
    realizations: &[
        fwd(act("visited")),
        fwd(act("toured")),
        fwd(prep("arrived", "in")),
        fwd(prep("traveled", "to")),
        fwd(prep("spoke", "in")),
    ],
};

pub static BORN_IN: Predicate = Predicate {
    name: "born_in",
    relation: None,
    a: Pool::Person,
    b: Pool::City,
    subj_is_a: true,
    realizations: &[
        fwd(ppass("was", "born", "in")),
        fwd(cop("a", "native", "of")),
        fwd(appos("a", "native", "of")),
    ],
};

pub static MET: Predicate = Predicate {
    name: "met",
    relation: None,
    a: Pool::Person,
    b: Pool::Person,
    subj_is_a: true,
    realizations: &[
        fwd(act("met")),
        fwd(act("interviewed")),
        fwd(act("thanked")),
        fwd(act("called")),
        fwd(prep("spoke", "with")),
    ],
};

pub static OPPOSED: Predicate = Predicate {
    name: "opposed",
    relation: None,
    a: Pool::Person,
    b: Pool::Person,
    subj_is_a: true,
    realizations: &[
        fwd(act("opposed")),
        fwd(act("defeated")),
        fwd(prep("argued", "with")),
        rev(pass("was", "defeated")),
    ],
};

pub static FRIEND: Predicate = Predicate {
    name: "friend",
    relation: None,
    a: Pool::Person,
    b: Pool::Person,
    subj_is_a: true,
    realizations: &[
        fwd(cop("a", "friend", "of")),
        fwd(cop("a", "colleague", "of")),
        fwd(appos("a", "friend", "of")),
        fwd(appos("a", "colleague", "of")),
    ],
};

pub static FOUNDED_IN: Predicate = Predicate {
    name: "founded_in",
    relation: None,
    a: Pool::Company,
    b: Pool::Date,
    subj_is_a: true,
    realizations: &[
        fwd(ppass("was", "founded", "in")),
        fwd(ppass("was", "established", "in")),
        fwd(ppass("was", "created", "in")),
    ],
};

pub static BORN_ON: Predicate = Predicate {
    name: "born_on",
    relation: None,
    a: Pool::Person,
    b: Pool::Date,
    subj_is_a: true,
    realizations: &[fwd(ppass("was", "born", "in")), fwd(prep("retired", "in")), fwd(prep("died", "in"))],
};

pub static CITY_HQ: Predicate = Predicate {
    name: "city_hq",
    relation: None,
    a: Pool::Company,
    b: Pool::City,
    subj_is_a: true,
    realizations: &[
        fwd(ppass("is", "based", "in")),
        fwd(ppass("is", "located", "in")),
        fwd(acl("based", "in")),
        fwd(has("has", "an", "office", "in")),
    ],
};

pub static CITIZEN: Predicate = Predicate {
    name: "citizen",
    relation: None,
    a: Pool::Person,
    b: Pool::Country,
    subj_is_a: true,
    realizations: &[
        fwd(cop("a", "citizen", "of")),
        fwd(prep("comes", "from")),
        fwd(appos("a", "citizen", "of")),
    ],
};

/// Relations of the first benchmark pool.
pub static POOL_A: [&Predicate; 5] = [&FOUNDED_BY, &TOP_MEMBERS, &ORG_PARENTS, &MEMBER_OF, &HEADQUARTERS];
/// Relations of the second benchmark pool.
pub static POOL_B: [&Predicate; 5] = [
    &EMPLOYEE_OF,
    &CITY_OF_RESIDENCE,
    &SPOUSE,
    &SCHOOLS_ATTENDED,
    &PER_PARENTS,
];

/// Predicates used as no-relation material in benchmarks.
pub static NEUTRAL: [&Predicate; 11] = [
    &VISITED,
    &CRITICIZED,
    &SUED,
    &COMPETES,
    &PARTNERED,
    &INVESTED,
    &VISITED_CITY,
    &BORN_IN,
    &MET,
    &OPPOSED,
    &FRIEND,
];

/// Every predicate in the world, in a fixed order.
pub fn lexicon() -> Vec<&'static Predicate> {
    let mut out: Vec<&'static Predicate> = Vec::new();
    out.extend(POOL_A);
    out.extend(POOL_B);
    out.extend(NEUTRAL);
    out.extend([&FOUNDED_IN, &BORN_ON, &CITY_HQ, &CITIZEN]);
    out
}

pub fn relation_predicate(relation: &str) -> Option<&'static Predicate> {
    POOL_A
        .iter()
        .chain(POOL_B.iter())
        .copied()
        .find(|p| p.relation == Some(relation))
}

/// Entity kind of a known world name (persons are recognised by their
/// first-name token); `None` for strings outside the world.
pub fn entity_kind(text: &str) -> Option<&'static str> {
    for pool in [Pool::Company, Pool::School, Pool::Group, Pool::City, Pool::Country] {
        if pool.names().contains(&text) {
            return Some(pool.etype());
        }
    }
    let first = text.split(' ').next().unwrap_or("");
    if FIRST_NAMES.contains(&first) {
        return Some("per");
    }
    if text.split(' ').next_back().is_some_and(|t| t.len() == 4 && t.chars().all(|c| c.is_ascii_digit())) {
        return Some("date");
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub tokens: Vec<String>,
    pub etype: String,
}

impl Entity {
    pub fn new(text: &str, etype: &str) -> Self {
        Self {
            tokens: text.split_whitespace().map(str::to_string).collect(),
            etype: etype.to_string(),
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn sample_entity(rng: &mut impl Rng, pool: Pool) -> Entity {
    let text = match pool {
        Pool::Person => {
            let first = FIRST_NAMES.choose(rng).expect("non-empty");
            if rng.random_bool(0.75) {
                format!("{first} {}", LAST_NAMES.choose(rng).expect("non-empty"))
            } else {
                first.to_string()
            }
        }
        Pool::Date => {
            let year = rng.random_range(1985..=2020);
            if rng.random_bool(0.3) {
                format!("{} {year}", MONTHS.choose(rng).expect("non-empty"))
            } else {
                year.to_string()
            }
        }
        _ => pool.names().choose(rng).expect("non-empty").to_string(),
    };
    Entity::new(&text, pool.etype())
}

/// Draws an entity sharing no token with `taken`.
fn fresh_entity(rng: &mut impl Rng, pool: Pool, taken: &BTreeSet<String>) -> Entity {
    loop {
        let e = sample_entity(rng, pool);
        if e.tokens.iter().all(|t| !taken.contains(t)) {
            return e;
        }
    }
}

/// Sentence-level additions around the clause.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjuncts {
    /// `In <date> ,` before the clause.
    pub date_prefix: Option<Entity>,
    /// `last year` after the clause.
    pub last_year: bool,
    /// `in <city>` after the clause.
    pub city_suffix: Option<Entity>,
    /// Tail for appositive frames (`said`, `announced`, `told reporters`).
    pub tail: Vec<String>,
}

const TAILS: &[&[&str]] = &[&["said"], &["announced"], &["told", "reporters"]];

struct Builder {
    words: Vec<(String, String)>,
    edges: Vec<DepEdge>,
}

impl Builder {
    fn word(&mut self, w: &str) -> usize {
        self.words.push((w.to_string(), OUTSIDE.to_string()));
        self.words.len() - 1
    }

    fn entity(&mut self, e: &Entity) -> (usize, EntitySpan) {
        let start = self.words.len();
        for t in &e.tokens {
            self.words.push((t.clone(), e.etype.clone()));
        }
        let end = self.words.len();
        let head = end - 1;
        for i in start..head {
            self.edges.push(DepEdge::new(head, i, "compound"));
        }
        (head, EntitySpan::new(start, end, e.etype.clone()))
    }

    fn edge(&mut self, head: usize, dep: usize, label: &str) {
        self.edges.push(DepEdge::new(head, dep, label));
    }

    /// `prep Y`, returning Y's head.
    fn pp(&mut self, prep: &str, y: &Entity) -> (usize, EntitySpan) {
        let p = self.word(prep);
        let (yh, ys) = self.entity(y);
        self.edge(yh, p, "case");
        (yh, ys)
    }

    fn det(&mut self, det: &str) -> Option<usize> {
        (!det.is_empty()).then(|| self.word(det))
    }

    fn tail(&mut self, tail: &[String]) -> usize {
        let root = self.word(&tail[0]);
        for t in &tail[1..] {
            let d = self.word(t);
            self.edge(root, d, "dobj");
        }
        root
    }
}

fn nmod(prep: &str) -> String {
    format!("nmod_{prep}")
}

/// Renders the clause; returns (root, X span, Y span).
fn clause(b: &mut Builder, frame: Frame, x: &Entity, y: &Entity, tail: &[String]) -> (usize, EntitySpan, EntitySpan) {
    match frame {
        Frame::Active { verb } => {
            let (xh, xs) = b.entity(x);
            let v = b.word(verb);
            let (yh, ys) = b.entity(y);
            b.edge(v, xh, "nsubj");
            b.edge(v, yh, "dobj");
            (v, xs, ys)
        }
        Frame::Passive { aux, verb } => {
            let (xh, xs) = b.entity(x);
            let a = b.word(aux);
            let v = b.word(verb);
            let (yh, ys) = b.pp("by", y);
            b.edge(v, xh, "nsubjpass");
            b.edge(v, a, "auxpass");
            b.edge(v, yh, "nmod_by");
            (v, xs, ys)
        }
        Frame::PrepVerb { verb, prep } => {
            let (xh, xs) = b.entity(x);
            let v = b.word(verb);
            let (yh, ys) = b.pp(prep, y);
            b.edge(v, xh, "nsubj");
            b.edge(v, yh, &nmod(prep));
            (v, xs, ys)
        }
        Frame::PassivePrep { aux, verb, prep } => {
            let (xh, xs) = b.entity(x);
            let a = b.word(aux);
            let v = b.word(verb);
            let (yh, ys) = b.pp(prep, y);
            b.edge(v, xh, "nsubjpass");
            b.edge(v, a, "auxpass");
            b.edge(v, yh, &nmod(prep));
            (v, xs, ys)
        }
        Frame::Copula { det, noun, prep } => {
            let (xh, xs) = b.entity(x);
            let c = b.word("is");
            let d = b.det(det);
            let n = b.word(noun);
            let (yh, ys) = b.pp(prep, y);
            b.edge(n, xh, "nsubj");
            b.edge(n, c, "cop");
            if let Some(d) = d {
                b.edge(n, d, "det");
            }
            b.edge(n, yh, &nmod(prep));
            (n, xs, ys)
        }
        Frame::Appos { det, noun, prep } => {
            let (xh, xs) = b.entity(x);
            let c1 = b.word(",");
            let d = b.det(det);
            let n = b.word(noun);
            let (yh, ys) = b.pp(prep, y);
            let c2 = b.word(",");
            let root = b.tail(tail);
            b.edge(root, xh, "nsubj");
            b.edge(xh, n, "appos");
            b.edge(n, c1, "punct");
            b.edge(n, c2, "punct");
            if let Some(d) = d {
                b.edge(n, d, "det");
            }
            b.edge(n, yh, &nmod(prep));
            (root, xs, ys)
        }
        Frame::Acl { verb, prep } => {
            let (xh, xs) = b.entity(x);
            let c1 = b.word(",");
            let v = b.word(verb);
            let (yh, ys) = b.pp(prep, y);
            let c2 = b.word(",");
            let root = b.tail(tail);
            b.edge(root, xh, "nsubj");
            b.edge(xh, v, "acl");
            b.edge(v, c1, "punct");
            b.edge(v, c2, "punct");
            b.edge(v, yh, &nmod(prep));
            (root, xs, ys)
        }
        Frame::HasObj { verb, det, obj, prep } => {
            let (xh, xs) = b.entity(x);
            let v = b.word(verb);
            let d = b.det(det);
            let o = b.word(obj);
            let (yh, ys) = b.pp(prep, y);
            b.edge(v, xh, "nsubj");
            b.edge(v, o, "dobj");
            if let Some(d) = d {
                let label = if matches!(det, "its" | "his" | "her") { "nmod_poss" } else { "det" };
                b.edge(o, d, label);
            }
            b.edge(v, yh, &nmod(prep));
            (v, xs, ys)
        }
    }
}

/// A generated sentence with the spans of arguments A and B.
#[derive(Debug, Clone)]
pub struct Generated {
    pub sentence: AnnotatedSentence,
    pub a: EntitySpan,
    pub b: EntitySpan,
}

/// Builds the parsed sentence for one realization.
pub fn render(id: &str, real: Realization, a: &Entity, b: &Entity, adj: &Adjuncts) -> Generated {
    let mut bld = Builder {
        words: Vec::new(),
        edges: Vec::new(),
    };
    let mut pending = Vec::new();
    if let Some(date) = &adj.date_prefix {
        let (dh, _) = bld.pp("In", date);
        let comma = bld.word(",");
        pending.push((dh, "nmod_in"));
        pending.push((comma, "punct"));
    }
    let default_tail = vec!["said".to_string()];
    let tail = if adj.tail.is_empty() { &default_tail } else { &adj.tail };
    let (x, y) = if real.a_first { (a, b) } else { (b, a) };
    let (root, xs, ys) = clause(&mut bld, real.frame, x, y, tail);
    for (dep, label) in pending {
        bld.edge(root, dep, label);
    }
    if adj.last_year {
        let l = bld.word("last");
        let yr = bld.word("year");
        bld.edge(yr, l, "amod");
        bld.edge(root, yr, "nmod_tmod");
    }
    if let Some(city) = &adj.city_suffix {
        let (ch, _) = bld.pp("in", city);
        bld.edge(root, ch, "nmod_in");
    }
    let stop = bld.word(".");
    bld.edge(root, stop, "punct");
    let sentence = AnnotatedSentence::new(id, bld.words, bld.edges).expect("generated sentences are well-formed");
    let (sa, sb) = if real.a_first { (xs, ys) } else { (ys, xs) };
    Generated {
        sentence,
        a: sa,
        b: sb,
    }
}

/// Surface tokens of a clause, without parse or adjuncts.
pub fn clause_tokens(frame: Frame, x: &str, y: &str, tail: &[String]) -> Vec<String> {
    let mut bld = Builder {
        words: Vec::new(),
        edges: Vec::new(),
    };
    let default_tail = vec!["said".to_string()];
    let tail = if tail.is_empty() { &default_tail } else { tail };
    clause(&mut bld, frame, &Entity::new(x, "x"), &Entity::new(y, "y"), tail);
    bld.words.into_iter().map(|(w, _)| w).collect()
}

pub fn tail_options() -> Vec<Vec<String>> {
    TAILS
        .iter()
        .map(|t| t.iter().map(|s| s.to_string()).collect())
        .collect()
}

fn sample_adjuncts(rng: &mut impl Rng, taken: &mut BTreeSet<String>) -> Adjuncts {
    let mut adj = Adjuncts {
        tail: TAILS.choose(rng).expect("non-empty").iter().map(|s| s.to_string()).collect(),
        ..Adjuncts::default()
    };
    if rng.random_bool(0.25) {
        let d = fresh_entity(rng, Pool::Date, taken);
        taken.extend(d.tokens.iter().cloned());
        adj.date_prefix = Some(d);
    }
    match rng.random_range(0..10) {
        0 | 1 => adj.last_year = true,
        2 | 3 => {
            let c = fresh_entity(rng, Pool::City, taken);
            taken.extend(c.tokens.iter().cloned());
            adj.city_suffix = Some(c);
        }
        _ => {}
    }
    adj
}

/// A random sentence for `pred`: random realization, entities and adjuncts.
pub fn sample_sentence(rng: &mut impl Rng, pred: &Predicate, id: &str) -> Generated {
    let real = *pred.realizations.choose(rng).expect("predicates have realizations");
    let mut taken = BTreeSet::new();
    let a = fresh_entity(rng, pred.a, &taken);
    taken.extend(a.tokens.iter().cloned());
    let b = fresh_entity(rng, pred.b, &taken);
    taken.extend(b.tokens.iter().cloned());
    let adj = sample_adjuncts(rng, &mut taken);
    render(id, real, &a, &b, &adj)
}

/// A labeled instance of `pred`; `subj_is_a` overrides the predicate's
/// own direction (used for relation-free predicates).
pub fn sample_instance(
    rng: &mut impl Rng,
    pred: &Predicate,
    id: &str,
    subj_is_a: bool,
    relation: Option<String>,
) -> RelationInstance {
    let g = sample_sentence(rng, pred, id);
    let (subj, obj) = if subj_is_a { (g.a, g.b) } else { (g.b, g.a) };
    RelationInstance::new(id, Arc::new(g.sentence), subj, obj, relation).expect("generated spans are disjoint")
}

/// Unlabeled parsed sentences drawn uniformly over the whole lexicon.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex = lexicon();
    (0..n)
        .map(|i| {
            let pred = lex.choose(&mut rng).expect("non-empty lexicon");
            sample_sentence(&mut rng, pred, &format!("c{i:05}")).sentence
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Probability that the query expresses one of the episode's relations.
    pub positive_rate: f64,
    /// Among negative queries, the share drawn from the other pool's
    /// relations (the rest are relation-free sentences).
    pub cross_pool_rate: f64,
    pub id_prefix: String,
}

impl BenchmarkConfig {
    /// The bundled 200-episode test benchmark.
    pub fn mini() -> Self {
        Self {
            episodes: 200,
            seed: 2024,
            positive_rate: 0.35,
            cross_pool_rate: 0.2,
            id_prefix: "mini".into(),
        }
    }

    /// The bundled 100-episode development benchmark.
    pub fn dev() -> Self {
        Self {
            episodes: 100,
            seed: 7,
            id_prefix: "dev".into(),
            ..Self::mini()
        }
    }
}

fn pool_of(i: usize) -> (&'static [&'static Predicate; 5], &'static [&'static Predicate; 5]) {
    if i.is_multiple_of(2) {
        (&POOL_A, &POOL_B)
    } else {
        (&POOL_B, &POOL_A)
    }
}

/// Relation-free predicates whose argument types can fill `(subj, obj)`,
/// with the direction to use.
fn neutral_for(subj: &str, obj: &str) -> Vec<(&'static Predicate, bool)> {
    let mut out = Vec::new();
    for p in NEUTRAL {
        if p.a.etype() == subj && p.b.etype() == obj {
            out.push((p, true));
        }
        if p.b.etype() == subj && p.a.etype() == obj && p.a.etype() != p.b.etype() {
            out.push((p, false));
        }
    }
    out
}

/// Episodes alternating between the two relation pools (5-way each), with
/// K alternating 1,1,5,5,...
pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.episodes)
        .map(|i| {
            let (pool, other) = pool_of(i);
            let k = if (i / 2) % 2 == 0 { 1 } else { 5 };
            let id = format!("{}-{i:03}", cfg.id_prefix);
            let mut supports = Vec::new();
            for pred in pool {
                for _ in 0..k {
                    let sid = format!("{id}-s{}", supports.len());
                    let rel = pred.relation.map(str::to_string);
                    supports.push(sample_instance(&mut rng, pred, &sid, pred.subj_is_a, rel));
                }
            }
            let qid = format!("{id}-q");
            let query = if rng.random_bool(cfg.positive_rate) {
                let pred = pool.choose(&mut rng).expect("non-empty pool");
                sample_instance(&mut rng, pred, &qid, pred.subj_is_a, pred.relation.map(str::to_string))
            } else if rng.random_bool(cfg.cross_pool_rate) {
                let pred = other.choose(&mut rng).expect("non-empty pool");
                sample_instance(&mut rng, pred, &qid, pred.subj_is_a, Some(NO_RELATION.into()))
            } else {
                let like = pool.choose(&mut rng).expect("non-empty pool");
                let (st, ot) = if like.subj_is_a { (like.a, like.b) } else { (like.b, like.a) };
                let options = neutral_for(st.etype(), ot.etype());
                let &(pred, subj_is_a) = options.choose(&mut rng).expect("neutral predicates cover every pool type pair");
                let subj_is_a = if pred.a.etype() == pred.b.etype() {
                    rng.random_bool(0.5)
                } else {
                    subj_is_a
                };
                sample_instance(&mut rng, pred, &qid, subj_is_a, Some(NO_RELATION.into()))
            };
            Episode { id, query, supports }
        })
        .collect()
}


/// A sentence recognised as one realization of a known predicate.
#[derive(Debug, Clone)]
pub struct Recognized {
    pub predicate: &'static Predicate,
    pub realization: Realization,
    pub prefix: Vec<String>,
    /// Token spans of the X and Y slots.
    pub x: (usize, usize),
    pub y: (usize, usize),
    /// Appositive tail, empty for frames without one.
    pub tail: Vec<String>,
    /// Tokens after the clause.
    pub rest: Vec<String>,
}

impl Recognized {
    /// Spans of arguments A and B.
    pub fn a_b(&self) -> ((usize, usize), (usize, usize)) {
        if self.realization.a_first {
            (self.x, self.y)
        } else {
            (self.y, self.x)
        }
    }
}

struct Template {
    predicate: &'static Predicate,
    realization: Realization,
    middle: Vec<String>,
    after: Vec<String>,
    tail: Vec<String>,
}

static TEMPLATES: LazyLock<Vec<Template>> = LazyLock::new(|| {
    let mut out = Vec::new();
    for p in lexicon() {
        for &r in p.realizations {
            let tails = if r.frame.has_tail() { tail_options() } else { vec![Vec::new()] };
            for tail in tails {
                let toks = clause_tokens(r.frame, "\u{1}", "\u{2}", &tail);
                let xi = toks.iter().position(|t| t == "\u{1}").expect("placeholder");
                let yi = toks.iter().position(|t| t == "\u{2}").expect("placeholder");
                out.push(Template {
                    predicate: p,
                    realization: r,
                    middle: toks[xi + 1..yi].to_vec(),
                    after: toks[yi + 1..].to_vec(),
                    tail: if r.frame.has_tail() { tail } else { Vec::new() },
                });
            }
        }
    }
    out
});

/// Start of the single occurrence of `needle` in `hay`; `None` when absent
/// or repeated.
pub fn find_unique(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    let mut hits = (0..=hay.len() - needle.len()).filter(|&i| hay[i..i + needle.len()] == *needle);
    let first = hits.next()?;
    hits.next().is_none().then_some(first)
}

fn kind_fits(text: &[String], pool: Pool) -> bool {
    entity_kind(&text.join(" ")).is_none_or(|k| k == pool.etype())
}

/// Finds the realization that produced `tokens`, given the two entity strings.
pub fn recognize(tokens: &[String], e1: &str, e2: &str) -> Option<Recognized> {
    let t1: Vec<String> = e1.split_whitespace().map(str::to_string).collect();
    let t2: Vec<String> = e2.split_whitespace().map(str::to_string).collect();
    let s1 = find_unique(tokens, &t1)?;
    let s2 = find_unique(tokens, &t2)?;
    let (x, y) = if s1 <= s2 {
        ((s1, s1 + t1.len()), (s2, s2 + t2.len()))
    } else {
        ((s2, s2 + t2.len()), (s1, s1 + t1.len()))
    };
    if x.1 > y.0 {
        return None;
    }
    let middle = &tokens[x.1..y.0];
    let suffix = &tokens[y.1..];
    TEMPLATES
        .iter()
        .find(|t| {
            let (xp, yp) = if t.realization.a_first {
                (t.predicate.a, t.predicate.b)
            } else {
                (t.predicate.b, t.predicate.a)
            };
            t.middle == middle
                && suffix.starts_with(&t.after)
                && kind_fits(&tokens[x.0..x.1], xp)
                && kind_fits(&tokens[y.0..y.1], yp)
        })
        .map(|t| Recognized {
            predicate: t.predicate,
            realization: t.realization,
            prefix: tokens[..x.0].to_vec(),
            x,
            y,
            tail: t.tail.clone(),
            rest: suffix[t.after.len()..].to_vec(),
        })
}

fn adjuncts_from(prefix: &[String], rest: &[String], tail: Vec<String>) -> Option<Adjuncts> {
    let mut adj = Adjuncts {
        tail,
        ..Adjuncts::default()
    };
    match prefix {
        [] => {}
        [first, date @ .., comma] if first == "In" && comma == "," && !date.is_empty() => {
            adj.date_prefix = Some(Entity::new(&date.join(" "), "date"));
        }
        _ => return None,
    }
    let mut rest = rest;
    if rest.len() >= 2 && rest[0] == "last" && rest[1] == "year" {
        adj.last_year = true;
        rest = &rest[2..];
    }
    match rest {
        [stop] if stop == "." => {}
        [first, city @ .., stop] if first == "in" && stop == "." && !city.is_empty() => {
            adj.city_suffix = Some(Entity::new(&city.join(" "), "city"));
        }
        _ => return None,
    }
    Some(adj)
}

/// Re-derives the parse of a sentence in the world's grammar. Returns the
/// sentence and the spans of `e1` and `e2`.
pub fn reparse(id: &str, tokens: &[String], e1: &str, e2: &str) -> Option<(AnnotatedSentence, EntitySpan, EntitySpan)> {
    let rec = recognize(tokens, e1, e2)?;
    let adj = adjuncts_from(&rec.prefix, &rec.rest, rec.tail.clone())?;
    let ((a0, a1), (b0, b1)) = rec.a_b();
    let a = Entity::new(&tokens[a0..a1].join(" "), rec.predicate.a.etype());
    let b = Entity::new(&tokens[b0..b1].join(" "), rec.predicate.b.etype());
    let g = render(id, rec.realization, &a, &b, &adj);
    let rendered: Vec<&str> = g.sentence.tokens().iter().map(|t| t.text.as_str()).collect();
    if rendered != tokens.iter().map(String::as_str).collect::<Vec<_>>() {
        return None;
    }
    let e1_is_a = tokens[a0..a1].join(" ") == e1;
    let (s1, s2) = if e1_is_a { (g.a, g.b) } else { (g.b, g.a) };
    Some((g.sentence, s1, s2))
}
