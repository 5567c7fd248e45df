//! Seeded synthetic job-search corpus.
//!
//! Items belong to occupational families; titles are `[seniority] specialty
//! role`. Descriptions are assembled from templated sentences in intro,
//! responsibilities, requirements and benefits blocks; the sentence count is
//! log-normal so lengths are long-tailed (median around 900 tokens).

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::{EmploymentType, JobItem, Query};

pub(crate) struct Family {
    pub specialties: &'static [&'static str],
    pub roles: &'static [&'static str],
    pub skills: &'static [&'static str],
    pub teams: &'static [&'static str],
}

pub(crate) const FAMILIES: &[Family] = &[
    Family {
        specialties: &["rust", "python", "java", "golang", "backend", "frontend", "platform", "mobile"],
        roles: &["engineer", "developer"],
        skills: &["microservices", "kubernetes", "apis", "testing", "concurrency", "databases", "deployment", "debugging", "observability", "compilers"],
        teams: &["engineering", "infrastructure", "product"],
    },
    Family {
        specialties: &["data", "analytics", "statistics", "insights"],
        roles: &["scientist", "analyst"],
        skills: &["sql", "regression", "dashboards", "experimentation", "pipelines", "modeling", "visualization", "forecasting", "notebooks"],
        teams: &["analytics", "research", "strategy"],
    },
    Family {
        specialties: &["registered", "pediatric", "surgical", "icu", "clinical"],
        roles: &["nurse", "practitioner"],
        skills: &["triage", "charting", "medication", "telemetry", "wound", "discharge", "vitals", "infection", "patients"],
        teams: &["nursing", "clinical", "care"],
    },
    Family {
        specialties: &["account", "enterprise", "territory", "inside", "regional"],
        roles: &["executive", "representative", "manager"],
        skills: &["prospecting", "quota", "pipeline", "negotiation", "crm", "renewals", "forecasts", "demos", "accounts"],
        teams: &["sales", "revenue", "partnerships"],
    },
    Family {
        specialties: &["digital", "content", "brand", "growth", "lifecycle"],
        roles: &["marketer", "strategist", "specialist"],
        skills: &["campaigns", "seo", "copywriting", "funnels", "newsletters", "attribution", "social", "positioning", "launches"],
        teams: &["marketing", "communications", "creative"],
    },
    Family {
        specialties: &["financial", "tax", "audit", "payroll", "treasury"],
        roles: &["accountant", "controller", "auditor"],
        skills: &["ledgers", "reconciliation", "gaap", "budgeting", "invoices", "reporting", "closing", "variance", "filings"],
        teams: &["finance", "accounting", "controlling"],
    },
    Family {
        specialties: &["ux", "graphic", "interaction", "visual", "industrial"],
        roles: &["designer", "illustrator"],
        skills: &["wireframes", "prototypes", "figma", "typography", "usability", "layouts", "branding", "sketches", "accessibility"],
        teams: &["design", "studio", "product"],
    },
    Family {
        specialties: &["warehouse", "supply", "fleet", "inventory", "shipping"],
        roles: &["coordinator", "planner", "supervisor"],
        skills: &["forklifts", "routing", "procurement", "replenishment", "dispatch", "freight", "scanning", "vendors", "pallets"],
        teams: &["operations", "logistics", "fulfillment"],
    },
    Family {
        specialties: &["math", "science", "english", "history", "music"],
        roles: &["teacher", "tutor", "instructor"],
        skills: &["curriculum", "lessons", "grading", "classrooms", "students", "assessments", "mentoring", "syllabus", "tutoring"],
        teams: &["faculty", "academic", "school"],
    },
    Family {
        specialties: &["restaurant", "hotel", "kitchen", "banquet", "pastry"],
        roles: &["chef", "host", "attendant"],
        skills: &["menus", "catering", "reservations", "plating", "sanitation", "guests", "events", "baking", "service"],
        teams: &["hospitality", "culinary", "guest"],
    },
    Family {
        specialties: &["electrical", "civil", "site", "plumbing", "hvac"],
        roles: &["technician", "foreman", "inspector"],
        skills: &["wiring", "blueprints", "permits", "installations", "maintenance", "safety", "conduits", "inspections", "repairs"],
        teams: &["construction", "facilities", "field"],
    },
    Family {
        specialties: &["corporate", "litigation", "compliance", "immigration", "patent"],
        roles: &["attorney", "paralegal", "counsel"],
        skills: &["contracts", "briefs", "discovery", "filings", "regulations", "depositions", "research", "memos", "trademarks"],
        teams: &["legal", "compliance", "governance"],
    },
];

const SENIORITY: &[&str] = &["senior", "junior", "lead", "staff", "principal", "associate"];

pub(crate) const COMPANIES: &[&str] = &[
    "Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Stark", "Wayne", "Wonka", "Tyrell",
    "Cyberdyne", "Soylent", "Massive", "Oscorp", "Gringotts", "Aperture", "Monarch", "Pied", "Dunder", "Nakatomi",
];

pub(crate) const LOCATIONS: &[&str] = &[
    "Berlin", "London", "Paris", "Austin", "Seattle", "Toronto", "Dublin", "Madrid", "Boston", "Denver",
    "Chicago", "Tokyo", "Sydney", "Amsterdam", "Zurich",
];

const VERBS: &[&str] = &[
    "design", "build", "maintain", "improve", "lead", "support", "deliver", "own", "review", "optimize",
    "coordinate", "plan", "analyze", "manage", "develop", "document", "monitor", "streamline",
];
const ADJECTIVES: &[&str] = &[
    "scalable", "reliable", "modern", "complex", "critical", "daily", "efficient", "secure", "robust",
    "customer", "quarterly", "weekly", "strategic", "accurate", "proactive",
];
const NOUNS: &[&str] = &[
    "systems", "processes", "projects", "workflows", "services", "reports", "programs", "operations",
    "standards", "tools", "initiatives", "roadmaps", "budgets", "metrics", "schedules",
];
const QUALITIES: &[&str] = &[
    "communication", "ownership", "curiosity", "attention", "teamwork", "judgment", "organization",
    "empathy", "initiative", "reliability",
];
const BENEFITS: &[&str] = &[
    "health insurance", "paid leave", "equity grants", "pension matching", "annual bonus",
    "training budget", "flexible hours", "parental leave", "wellness stipend", "commuter benefits",
    "dental coverage", "home office allowance",
];

/// Median sentences per description; sentences average ~15 tokens.
const MEDIAN_SENTENCES: f64 = 58.0;
const SENTENCE_SIGMA: f64 = 0.38;

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty pool")
}

fn article(word: &str) -> &'static str {
    match word.as_bytes().first() {
        Some(b'a' | b'e' | b'i' | b'o' | b'u') => "an",
        _ => "a",
    }
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(f) => f.to_uppercase().chain(cs).collect::<String>(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn responsibility<R: Rng>(rng: &mut R, fam: &Family) -> String {
    match rng.random_range(0..4) {
        0 => format!(
            "{} {} {} {} and {} {} {} across {} teams.",
            title_case(pick(rng, VERBS)),
            pick(rng, ADJECTIVES),
            pick(rng, fam.skills),
            pick(rng, NOUNS),
            pick(rng, VERBS),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            pick(rng, fam.teams),
        ),
        1 => format!(
            "Partner closely with {} leadership to {} {} {}, {} {} and {} {}.",
            pick(rng, fam.teams),
            pick(rng, VERBS),
            pick(rng, fam.skills),
            pick(rng, NOUNS),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            pick(rng, fam.skills),
            pick(rng, NOUNS),
        ),
        2 => format!(
            "{} {} {} {}, {} {} {} {} using {} {}.",
            title_case(pick(rng, VERBS)),
            pick(rng, ADJECTIVES),
            pick(rng, fam.skills),
            pick(rng, NOUNS),
            pick(rng, VERBS),
            pick(rng, ADJECTIVES),
            pick(rng, fam.skills),
            pick(rng, NOUNS),
            pick(rng, ADJECTIVES),
            pick(rng, fam.skills),
        ),
        _ => format!(
            "Track {} {} metrics, surface {} {} risks early and {} {} {} improvements.",
            pick(rng, fam.skills),
            pick(rng, NOUNS),
            pick(rng, ADJECTIVES),
            pick(rng, fam.skills),
            pick(rng, VERBS),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
        ),
    }
}

fn requirement<R: Rng>(rng: &mut R, fam: &Family) -> String {
    match rng.random_range(0..3) {
        0 => format!(
            "{} years of hands on {} experience with {} {} and {} {}.",
            title_case(["two", "three", "four", "five", "six", "eight"][rng.random_range(0..6)]),
            pick(rng, fam.skills),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            pick(rng, fam.skills),
            pick(rng, NOUNS),
        ),
        1 => format!(
            "Demonstrated {} and {}, strong {} skills, proven {} {} delivery.",
            pick(rng, QUALITIES),
            pick(rng, QUALITIES),
            pick(rng, fam.skills),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
        ),
        _ => format!(
            "Familiarity with {} {}, {} {} tooling, plus {} {} practices is a plus.",
            pick(rng, fam.skills),
            pick(rng, NOUNS),
            pick(rng, ADJECTIVES),
            pick(rng, fam.skills),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
        ),
    }
}

fn benefit<R: Rng>(rng: &mut R) -> String {
    format!(
        "Competitive salary, {}, {}, {} and {} for every employee.",
        pick(rng, BENEFITS),
        pick(rng, BENEFITS),
        pick(rng, BENEFITS),
        pick(rng, BENEFITS),
    )
}

fn make_title<R: Rng>(rng: &mut R, fam: &Family) -> String {
    let spec = pick(rng, fam.specialties);
    let role = pick(rng, fam.roles);
    if rng.random_bool(0.5) {
        title_case(&format!("{} {spec} {role}", pick(rng, SENIORITY)))
    } else {
        title_case(&format!("{spec} {role}"))
    }
}

fn make_description<R: Rng>(rng: &mut R, fam: &Family, title: &str, company: &str, location: &str) -> String {
    let dist = LogNormal::new(MEDIAN_SENTENCES.ln(), SENTENCE_SIGMA).expect("valid lognormal");
    let total = (dist.sample(rng).round() as usize).max(4);
    // intro(2) | responsibilities | requirements | benefits
    let body = total - 2;
    let n_benefit = (body / 8).max(1);
    let n_req = ((body - n_benefit) * 2 / 5).max(1);
    let n_resp = body.saturating_sub(n_benefit + n_req).max(1);

    let lower_title = title.to_lowercase();
    let mut s = Vec::with_capacity(total);
    s.push(format!(
        "{company} is hiring {} {lower_title} in {location} to {} {} {} {}.",
        article(&lower_title),
        pick(rng, VERBS),
        pick(rng, ADJECTIVES),
        pick(rng, fam.skills),
        pick(rng, NOUNS),
    ));
    s.push(format!(
        "As our {lower_title} you will {} {} {} with the {} group.",
        pick(rng, VERBS),
        pick(rng, fam.skills),
        pick(rng, NOUNS),
        pick(rng, fam.teams),
    ));
    s.push("Responsibilities:".to_string());
    for _ in 0..n_resp {
        s.push(responsibility(rng, fam));
    }
    s.push("Requirements:".to_string());
    for _ in 0..n_req {
        s.push(requirement(rng, fam));
    }
    s.push("Benefits:".to_string());
    for _ in 0..n_benefit {
        s.push(benefit(rng));
    }
    s.join(" ")
}

fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over (seed, stream, index)
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xD1B54A32D192ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn generate_item(seed: u64, index: usize) -> JobItem {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1, index as u64));
    let fam = &FAMILIES[rng.random_range(0..FAMILIES.len())];
    let title = make_title(&mut rng, fam);
    let company = pick(&mut rng, COMPANIES).to_string();
    let location = pick(&mut rng, LOCATIONS).to_string();
    let employment_type = match rng.random_range(0..10) {
        0..=5 => EmploymentType::FullTime,
        6 | 7 => EmploymentType::Contract,
        8 => EmploymentType::PartTime,
        _ => EmploymentType::Internship,
    };
    let remote_eligible = rng.random_bool(0.35);
    let description = make_description(&mut rng, fam, &title, &company, &location);
    JobItem {
        id: format!("j{index:06}"),
        title,
        company,
        location,
        employment_type,
        remote_eligible,
        description,
    }
}

pub(crate) fn generate_query(seed: u64, index: usize) -> Query {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2, index as u64));
    let fam = &FAMILIES[rng.random_range(0..FAMILIES.len())];
    let spec = pick(&mut rng, fam.specialties);
    let role = pick(&mut rng, fam.roles);
    let text = match rng.random_range(0..8) {
        0 | 1 => format!("{spec} {role}"),
        2 => format!("{} {spec} {role}", pick(&mut rng, SENIORITY)),
        3 => format!("{spec} {role} {}", pick(&mut rng, LOCATIONS).to_lowercase()),
        4 => format!("remote {spec} {role}"),
        5 => format!("{role} {}", pick(&mut rng, LOCATIONS).to_lowercase()),
        6 => format!("{spec} {}", pick(&mut rng, fam.skills)),
        _ => format!("{} {role}", ["part time", "contract", "internship", "full time"][rng.random_range(0..4)]),
    };
    Query { id: format!("q{index:05}"), text }
}
