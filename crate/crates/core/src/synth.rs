//! Synthetic corpora: planted-topic token documents for solver and stability
//! experiments, and the small demo collection shipped with the command-line
//! tool.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::features::{build_vocabulary, compute_tfidf};
use crate::ingest::YearMonth;
use crate::preprocess::TokenStream;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpec {
    pub documents: usize,
    pub vocabulary: usize,
    /// Topics own disjoint, equal-sized blocks of the vocabulary.
    pub topics: usize,
    pub words_per_document: usize,
    /// Fraction of tokens drawn uniformly from the whole vocabulary.
    pub noise: f64,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn new(documents: usize, vocabulary: usize, topics: usize, seed: u64) -> Self {
        Self { documents, vocabulary, topics, words_per_document: 60, noise: 0.1, seed }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub documents: Vec<TokenStream>,
    /// Planted topic of each document.
    pub dominant: Vec<usize>,
    /// tf-idf matrix over every term that occurs.
    pub matrix: CsrMatrix,
    pub terms: Vec<String>,
}

/// Planted topic of a vocabulary word, `None` past the last full block.
pub fn planted_topic_of(plan: &PlantedSpec, word: usize) -> Option<usize> {
    let block = plan.vocabulary / plan.topics;
    (word / block < plan.topics).then_some(word / block)
}

fn word_name(i: usize) -> String {
    format!("w{i:04}")
}

/// Documents drawn mostly from one planted topic each. Within a topic, word
/// frequencies follow a Zipf law so that top terms are well defined.
pub fn planted_topics(plan: &PlantedSpec) -> PlantedCorpus {
    assert!(plan.topics >= 1 && plan.vocabulary >= plan.topics, "planted corpus needs vocabulary >= topics >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let block = plan.vocabulary / plan.topics;
    let zipf = WeightedIndex::new((0..block).map(|r| 1.0 / (r as f64 + 1.0))).expect("nonempty topic block");
    let mut documents = Vec::with_capacity(plan.documents);
    let mut dominant = Vec::with_capacity(plan.documents);
    for d in 0..plan.documents {
        let topic = d % plan.topics;
        let tokens = (0..plan.words_per_document)
            .map(|_| {
                let word = if rng.gen::<f64>() < plan.noise {
                    rng.gen_range(0..plan.vocabulary)
                } else {
                    topic * block + zipf.sample(&mut rng)
                };
                word_name(word)
            })
            .collect();
        documents.push(TokenStream { article_id: format!("p{d:05}"), tokens });
        dominant.push(topic);
    }
    let vocab = build_vocabulary(&documents, 1.0, 1).expect("planted corpus has terms");
    let dtm = compute_tfidf(&documents, &vocab).expect("planted corpus matrix");
    PlantedCorpus { documents, dominant, matrix: dtm.matrix, terms: vocab.terms() }
}

const THEMES: [&[&str]; 5] = [
    &[
        "The mRNA vaccine trial reported strong neutralizing antibody titers after the second dose.",
        "Booster doses restored antibody levels that had waned within six months.",
        "Vaccine efficacy against symptomatic infection remained high in older adults.",
        "Participants reported mild adverse events such as fatigue and injection site pain.",
        "The immune response to the spike protein was measured with a binding assay.",
        "Vaccination coverage increased steadily once eligibility expanded to younger groups.",
        "Hesitancy surveys linked vaccine uptake to trust in public health agencies.",
        "Randomized trials compared the adjuvanted vaccine against a saline placebo.",
        "Antibody titers were highest in recipients who had a prior infection.",
        "The immune response after vaccination was durable in most participants.",
    ],
    &[
        "Social distancing and mask mandates reduced household transmission in dense neighborhoods.",
        "Contact tracing identified clusters linked to indoor gatherings and restaurants.",
        "Aerosol particles lingered in poorly ventilated classrooms for several hours.",
        "The reproduction number fell below one after lockdown measures were introduced.",
        "Mobility data showed commuters returning to offices as restrictions eased.",
        "Surgical masks filtered most droplets in the laboratory experiments.",
        "School closures were associated with fewer infections among teachers and students.",
        "Quarantine compliance declined when testing sites were far from home.",
        "Household transmission was lower when contact tracing started early.",
        "Social distancing rules were relaxed once community transmission declined.",
    ],
    &[
        "Mental health surveys found rising anxiety and depression among healthcare workers.",
        "Loneliness during lockdown worsened sleep quality for elderly residents.",
        "Adolescents reported more stress and anxiety when classes moved online.",
        "Telehealth counseling sessions helped patients maintain psychiatric care.",
        "Burnout among nurses was linked to long shifts and staffing shortages.",
        "Screening questionnaires measured depressive symptoms at baseline and follow up.",
        "Substance misuse increased among young adults who lost employment.",
        "Resilience training programs reduced emotional exhaustion in hospital staff.",
        "Mental health services expanded telehealth counseling for anxious families.",
        "Depression scores improved when burnout programs offered peer support.",
    ],
    &[
        "Patients admitted to the intensive care unit often required mechanical ventilation.",
        "Dexamethasone lowered mortality among hospitalized patients receiving oxygen.",
        "Acute respiratory distress syndrome developed within days of admission.",
        "Prone positioning improved oxygenation in critically ill patients.",
        "Thrombosis and elevated inflammatory markers predicted poor clinical outcomes.",
        "Hospital capacity was strained when admissions peaked during winter.",
        "Clinicians evaluated remdesivir in a multicenter cohort of inpatients.",
        "Kidney injury complicated recovery for many ventilated patients.",
        "Mortality in the intensive care unit fell as oxygen therapy protocols improved.",
        "Mechanical ventilation was avoided in patients who responded to prone positioning.",
    ],
    &[
        "Genomic surveillance detected a new variant carrying several spike mutations.",
        "Whole genome sequencing traced lineages across regional outbreaks.",
        "The delta variant showed higher transmissibility than earlier lineages.",
        "Phylogenetic analysis revealed repeated introductions from international travel.",
        "Mutations in the receptor binding domain reduced neutralization by convalescent sera.",
        "Omicron sublineages spread rapidly despite widespread prior exposure.",
        "Laboratories shared viral sequences through a public genomic database.",
        "Structural modeling predicted how the mutations alter receptor binding.",
        "Genomic surveillance networks sequenced thousands of lineages every week.",
        "Variant mutations were tracked with whole genome sequencing in sentinel laboratories.",
    ],
];

const THEME_TITLES: [&str; 5] = [
    "Vaccine immunogenicity and uptake",
    "Transmission and community measures",
    "Mental health during the pandemic",
    "Critical care outcomes",
    "Genomic surveillance of variants",
];

const SPANISH: &[&str] = &[
    "La vacunación de los trabajadores sanitarios comenzó en enero y redujo las hospitalizaciones en todas las regiones del país.",
    "Los investigadores analizaron las muestras de los pacientes ingresados durante la primera ola de la pandemia.",
    "El uso de mascarillas en los espacios cerrados disminuyó los contagios entre los estudiantes y sus familias.",
    "Las encuestas mostraron que la ansiedad y la depresión aumentaron durante el confinamiento prolongado.",
    "Los hospitales ampliaron las unidades de cuidados intensivos para atender a los enfermos más graves.",
];

/// Noun phrases that the demo accept list merges into single tokens.
pub const DEMO_PHRASES: &[&str] = &[
    "intensive care unit",
    "mechanical ventilation",
    "contact tracing",
    "social distancing",
    "household transmission",
    "mental health",
    "immune response",
    "spike protein",
    "genomic surveillance",
    "whole genome sequencing",
    "telehealth counseling",
    "prone positioning",
    "antibody titers",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoCorpus {
    pub metadata_csv: String,
    pub bodies_jsonl: String,
    pub accept_list: String,
}

#[derive(Serialize)]
struct BodyLine<'a> {
    id: &'a str,
    body_text: &'a str,
}

#[derive(Clone, Copy)]
enum DemoKind {
    OnTopic,
    Spanish,
    TooShort,
    OutOfWindow,
    MissingBody,
}

fn theme_weights(month_index: usize, months: usize) -> [f64; 5] {
    let x = month_index as f64 / (months - 1).max(1) as f64;
    [
        0.2 + 2.0 * x,
        1.8 - 1.4 * x,
        0.6 + 1.2 * (std::f64::consts::PI * x).sin(),
        1.4 - 0.8 * x + 0.6 * (2.0 * std::f64::consts::PI * x).cos().max(0.0),
        0.1 + 1.8 * x * x,
    ]
}

const DEMO_MIN_WORDS: usize = 60;

fn on_topic_body(rng: &mut ChaCha8Rng, theme: usize) -> String {
    let secondary = (theme + rng.gen_range(1..THEMES.len())) % THEMES.len();
    let sentences = rng.gen_range(6..=8);
    let mut paragraph: Vec<&str> = Vec::with_capacity(sentences);
    let mut words = 0;
    // keep clear of the ingest length floor whatever sentences are drawn
    while paragraph.len() < sentences || words < DEMO_MIN_WORDS {
        let source = if rng.gen::<f64>() < 0.8 { THEMES[theme] } else { THEMES[secondary] };
        let sentence = source.choose(rng).expect("themes are nonempty");
        words += sentence.split_whitespace().count();
        paragraph.push(sentence);
    }
    paragraph.join(" ")
}

/// The 200-document demo collection: 182 English articles over five themes
/// whose popularity drifts across 2020-05..2021-10 (December 2020 has no
/// articles), plus Spanish, too-short, out-of-window and body-less rows that
/// the ingest filters drop.
pub fn demo_corpus(seed: u64) -> DemoCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = YearMonth::new(2020, 12).expect("valid month");
    let months: Vec<YearMonth> = YearMonth::range_inclusive(
        YearMonth::new(2020, 5).expect("valid month"),
        YearMonth::new(2021, 10).expect("valid month"),
    );
    let active: Vec<(usize, YearMonth)> = months.iter().copied().enumerate().filter(|(_, m)| *m != gap).collect();

    let mut kinds: Vec<DemoKind> = std::iter::repeat_n(DemoKind::OnTopic, 182)
        .chain(std::iter::repeat_n(DemoKind::Spanish, 6))
        .chain(std::iter::repeat_n(DemoKind::TooShort, 5))
        .chain(std::iter::repeat_n(DemoKind::OutOfWindow, 6))
        .chain(std::iter::once(DemoKind::MissingBody))
        .collect();
    kinds.shuffle(&mut rng);

    let mut meta = csv::Writer::from_writer(Vec::new());
    meta.write_record(["id", "title", "publish_time", "source"]).expect("in-memory write");
    let mut bodies = String::new();
    for (i, kind) in kinds.into_iter().enumerate() {
        let id = format!("demo-{:04}", i + 1);
        let (idx, month) = active[rng.gen_range(0..active.len())];
        let day = rng.gen_range(1..=28);
        let (title, month, body) = match kind {
            DemoKind::OnTopic | DemoKind::MissingBody => {
                let weights = WeightedIndex::new(theme_weights(idx, months.len())).expect("positive weights");
                let theme = weights.sample(&mut rng);
                (THEME_TITLES[theme].to_string(), month, on_topic_body(&mut rng, theme))
            }
            DemoKind::Spanish => {
                let mut s: Vec<&str> = SPANISH.to_vec();
                s.shuffle(&mut rng);
                ("Estudio observacional".to_string(), month, s.join(" "))
            }
            DemoKind::TooShort => {
                let theme = rng.gen_range(0..THEMES.len());
                let body = format!("{} {}", THEMES[theme][0], THEMES[theme][1]);
                ("Brief communication".to_string(), month, body)
            }
            DemoKind::OutOfWindow => {
                let outside = if rng.gen_bool(0.5) {
                    YearMonth::new(2019, 11 + rng.gen_range(0..2)).expect("valid month")
                } else {
                    YearMonth::new(2022, 7 + rng.gen_range(0..3)).expect("valid month")
                };
                let theme = rng.gen_range(0..THEMES.len());
                (THEME_TITLES[theme].to_string(), outside, on_topic_body(&mut rng, theme))
            }
        };
        let publish_time = format!("{month}-{day:02}");
        let source = if i % 3 == 0 { "preprint" } else { "journal" };
        meta.write_record([id.as_str(), title.as_str(), publish_time.as_str(), source]).expect("in-memory write");
        if !matches!(kind, DemoKind::MissingBody) {
            let line = serde_json::to_string(&BodyLine { id: &id, body_text: &body }).expect("serializable body");
            bodies.push_str(&line);
            bodies.push('\n');
        }
    }
    let metadata_csv = String::from_utf8(meta.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    let mut accept_list = String::from("# phrases merged into single tokens\n");
    for phrase in DEMO_PHRASES {
        accept_list.push_str(phrase);
        accept_list.push('\n');
    }
    DemoCorpus { metadata_csv, bodies_jsonl: bodies, accept_list }
}
