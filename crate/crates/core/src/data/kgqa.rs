//! Corporate knowledge graphs: people, projects and resources joined by REPORTS_TO, WORKS_ON,
//! REQUIRES and HAS_ACCESS, with yes/no hierarchy and access questions.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::{yes_no, DataError, Split, TaskSpec, PROMPT_TEXT};
use crate::graph::{GraphError, QaRecord, TextAttributedGraph};

const FIRST: [&str; 24] = [
    "Ava", "Ben", "Cole", "Dana", "Eli", "Faye", "Gil", "Hope", "Ivan", "Jade", "Kai", "Lena", "Max", "Nia", "Omar",
    "Pia", "Ray", "Sara", "Tom", "Uma", "Vic", "Wes", "Xena", "Yuri",
];
const LAST: [&str; 10] = ["Adams", "Baker", "Chen", "Diaz", "Evans", "Ford", "Gray", "Hill", "Ito", "Jones"];
const PROJECTS: [&str; 12] =
    ["Apollo", "Borealis", "Cobalt", "Delta", "Ember", "Falcon", "Granite", "Helix", "Iris", "Juno", "Kepler", "Lumen"];
const RESOURCES: [&str; 6] = ["Server", "Database", "Repository", "Dashboard", "Cluster", "Vault"];

/// Questions per graph; half answer "Yes".
pub const QUESTIONS_PER_GRAPH: usize = 6;
const REJECTION_BUDGET: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Person,
    Project,
    Resource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KgEntity {
    pub kind: EntityKind,
    pub name: String,
}

impl KgEntity {
    pub fn text(&self) -> String {
        let kind = match self.kind {
            EntityKind::Person => "person",
            EntityKind::Project => "project",
            EntityKind::Resource => "resource",
        };
        format!("{}; type: {kind}", self.name)
    }
}

/// Entity `i` becomes graph node `i + 1`. The relation of an edge follows from its endpoint types.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KgGraph {
    pub entities: Vec<KgEntity>,
    /// Direct manager; exactly one person has none.
    pub boss: Vec<Option<usize>>,
    pub works_on: BTreeSet<(usize, usize)>,
    pub requires: BTreeSet<(usize, usize)>,
    pub has_access: BTreeSet<(usize, usize)>,
}

impl KgGraph {
    pub fn of_kind(&self, kind: EntityKind) -> Vec<usize> {
        (0..self.entities.len()).filter(|&i| self.entities[i].kind == kind).collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self.boss.iter().enumerate().filter_map(|(i, b)| b.map(|b| (i, b))).collect();
        e.extend(self.works_on.iter().chain(&self.requires).chain(&self.has_access).copied());
        e.sort_unstable();
        e
    }

    fn chain_of_command(&self, x: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.boss[x];
        while let Some(b) = cur {
            out.push(b);
            cur = self.boss[b];
        }
        out
    }

    /// `x` and everyone below it in the hierarchy.
    fn team(&self, x: usize) -> Vec<usize> {
        (0..self.entities.len()).filter(|&p| p == x || self.chain_of_command(p).contains(&x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgQuestion {
    IsCeo(usize),
    ReportsTo(usize, usize),
    /// Person can use every resource the project requires; vacuously true for none.
    CanStaff(usize, usize),
    /// Person or someone below them in the hierarchy has access to the resource.
    TeamAccess(usize, usize),
}

impl KgQuestion {
    pub fn text(&self, g: &KgGraph) -> String {
        let n = |i: usize| g.entities[i].name.as_str();
        match *self {
            KgQuestion::IsCeo(x) => format!("Is {} the CEO (has no boss)?", n(x)),
            KgQuestion::ReportsTo(x, y) => format!("Does {} report to {} directly or indirectly?", n(x), n(y)),
            KgQuestion::CanStaff(x, p) => format!("Does {} have access to every resource required by {}?", n(x), n(p)),
            KgQuestion::TeamAccess(x, r) => {
                format!("Does {} or anyone reporting to {} have access to {}?", n(x), n(x), n(r))
            }
        }
    }

    pub fn answer(&self, g: &KgGraph) -> bool {
        match *self {
            KgQuestion::IsCeo(x) => g.boss[x].is_none(),
            KgQuestion::ReportsTo(x, y) => g.chain_of_command(x).contains(&y),
            KgQuestion::CanStaff(x, p) => g.requires.iter().filter(|e| e.0 == p).all(|&(_, r)| g.has_access.contains(&(x, r))),
            KgQuestion::TeamAccess(x, r) => g.team(x).into_iter().any(|p| g.has_access.contains(&(p, r))),
        }
    }

    fn mentions(&self) -> Vec<usize> {
        match *self {
            KgQuestion::IsCeo(x) => vec![x],
            KgQuestion::ReportsTo(a, b) | KgQuestion::CanStaff(a, b) | KgQuestion::TeamAccess(a, b) => vec![a, b],
        }
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

/// Draws `geom` distinct items from `pool`, capped at the pool size.
fn some_of(rng: &mut ChaCha8Rng, geom: &Geometric, pool: &[usize], extra: u64) -> Vec<usize> {
    let k = ((geom.sample(rng) + extra) as usize).min(pool.len());
    sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

pub fn gen_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> KgGraph {
    let geom = Geometric::new(p).expect("probability checked by caller");
    // the first three slots guarantee one entity of each kind
    let kinds: Vec<EntityKind> = (0..n)
        .map(|i| match i {
            0 => EntityKind::Person,
            1 => EntityKind::Project,
            2 => EntityKind::Resource,
            _ => match rng.random::<f64>() {
                u if u < 0.55 => EntityKind::Person,
                u if u < 0.75 => EntityKind::Project,
                _ => EntityKind::Resource,
            },
        })
        .collect();
    let mut counters = [0usize; 3];
    let entities = kinds
        .iter()
        .map(|&kind| {
            let slot = kind as usize;
            let k = counters[slot];
            counters[slot] += 1;
            let name = match kind {
                EntityKind::Person => format!("{} {}", FIRST[k % FIRST.len()], LAST[(k / FIRST.len()) % LAST.len()]),
                EntityKind::Project if k < PROJECTS.len() => format!("Project {}", PROJECTS[k]),
                EntityKind::Project => format!("Project {}{}", PROJECTS[k % PROJECTS.len()], k / PROJECTS.len()),
                EntityKind::Resource => format!("{} {}", RESOURCES[k % RESOURCES.len()], k / RESOURCES.len() + 1),
            };
            KgEntity { kind, name }
        })
        .collect();
    let mut g = KgGraph { entities, boss: vec![None; n], ..Default::default() };
    let people = g.of_kind(EntityKind::Person);
    let projects = g.of_kind(EntityKind::Project);
    let resources = g.of_kind(EntityKind::Resource);
    // each later person reports to an earlier one: a single rooted tree
    for (i, &p) in people.iter().enumerate().skip(1) {
        g.boss[p] = Some(people[rng.random_range(0..i)]);
    }
    for &pr in &projects {
        for r in some_of(rng, &geom, &resources, 0) {
            g.requires.insert((pr, r));
        }
    }
    for &p in &people {
        for pr in some_of(rng, &geom, &projects, 1) {
            g.works_on.insert((p, pr));
            // project members often hold what their project needs
            if rng.random_bool(0.5) {
                let needs: Vec<usize> = g.requires.iter().filter(|e| e.0 == pr).map(|e| e.1).collect();
                g.has_access.extend(needs.into_iter().map(|r| (p, r)));
            }
        }
        for r in some_of(rng, &geom, &resources, 0) {
            g.has_access.insert((p, r));
        }
    }
    g
}

fn random_question(rng: &mut ChaCha8Rng, g: &KgGraph) -> KgQuestion {
    let people = g.of_kind(EntityKind::Person);
    match rng.random_range(0..4) {
        0 => KgQuestion::IsCeo(pick(rng, &people)),
        1 => {
            let x = pick(rng, &people);
            let chain = g.chain_of_command(x);
            // half the draws aim at a real superior so Yes answers are not rare
            let y = if !chain.is_empty() && rng.random_bool(0.5) { pick(rng, &chain) } else { pick(rng, &people) };
            KgQuestion::ReportsTo(x, y)
        }
        2 => KgQuestion::CanStaff(pick(rng, &people), pick(rng, &g.of_kind(EntityKind::Project))),
        _ => KgQuestion::TeamAccess(pick(rng, &people), pick(rng, &g.of_kind(EntityKind::Resource))),
    }
}

pub fn kg_record(g: &KgGraph, q: &KgQuestion) -> Result<QaRecord, DataError> {
    let mut texts = vec![PROMPT_TEXT.to_string()];
    texts.extend(g.entities.iter().map(KgEntity::text));
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut edges: Vec<(usize, usize)> = g.edges().into_iter().map(|(a, b)| (a + 1, b + 1)).collect();
    let mut anchors = q.mentions();
    anchors.dedup();
    edges.extend(anchors.into_iter().map(|a| (0, a + 1)));
    let graph = TextAttributedGraph::from_texts(&refs, &edges).map_err(GraphError::Invalid)?;
    Ok(QaRecord { graph, question: q.text(g), label: yes_no(q.answer(g)) })
}

/// Exactly three Yes and three No questions per graph, without repeats.
pub fn balanced_questions(rng: &mut ChaCha8Rng, g: &KgGraph) -> Result<Vec<KgQuestion>, DataError> {
    let half = QUESTIONS_PER_GRAPH / 2;
    let (mut yes, mut no) = (Vec::new(), Vec::new());
    for _ in 0..REJECTION_BUDGET {
        let q = random_question(rng, g);
        if yes.contains(&q) || no.contains(&q) {
            continue;
        }
        let bucket = if q.answer(g) { &mut yes } else { &mut no };
        if bucket.len() < half {
            bucket.push(q);
        }
        if yes.len() == half && no.len() == half {
            yes.append(&mut no);
            return Ok(yes);
        }
    }
    Err(DataError::RejectionBudgetExceeded(REJECTION_BUDGET))
}

/// `spec.counts` counts graphs; every graph yields six records. `spec.sizes` bounds the entity
/// count, prompt node excluded.
pub fn gen_kgqa(spec: &TaskSpec, split: Split) -> Result<Vec<QaRecord>, DataError> {
    spec.check_sizes(10, 200)?;
    if !(spec.geometric_p > 0.0 && spec.geometric_p <= 1.0) {
        return Err(DataError::InvalidSpec(format!("geometric_p {} outside (0, 1]", spec.geometric_p)));
    }
    let mut rng = spec.rng(split);
    let mut out = Vec::new();
    for _ in 0..spec.count(split) {
        let n = rng.random_range(spec.sizes.0..=spec.sizes.1);
        let g = gen_graph(&mut rng, n, spec.geometric_p);
        for q in balanced_questions(&mut rng, &g)? {
            out.push(kg_record(&g, &q)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> KgGraph {
        let e = |kind, name: &str| KgEntity { kind, name: name.into() };
        KgGraph {
            entities: vec![
                e(EntityKind::Person, "Ava Adams"),
                e(EntityKind::Person, "Ben Adams"),
                e(EntityKind::Person, "Cole Adams"),
                e(EntityKind::Project, "Project Apollo"),
                e(EntityKind::Project, "Project Borealis"),
                e(EntityKind::Resource, "Server 1"),
            ],
            boss: vec![None, Some(0), Some(1), None, None, None],
            works_on: [(1, 3)].into(),
            requires: [(3, 5)].into(),
            has_access: [(2, 5)].into(),
        }
    }

    #[test]
    fn hierarchy_answers() {
        let g = tiny();
        assert!(KgQuestion::IsCeo(0).answer(&g));
        assert!(!KgQuestion::IsCeo(2).answer(&g));
        assert!(KgQuestion::ReportsTo(2, 0).answer(&g));
        assert!(!KgQuestion::ReportsTo(0, 2).answer(&g));
    }

    #[test]
    fn project_without_requirements_is_vacuously_staffable() {
        let g = tiny();
        assert!(KgQuestion::CanStaff(0, 4).answer(&g));
        assert!(!KgQuestion::CanStaff(0, 3).answer(&g));
        assert!(KgQuestion::CanStaff(2, 3).answer(&g));
    }

    #[test]
    fn team_access_reaches_down_the_tree() {
        let g = tiny();
        assert!(KgQuestion::TeamAccess(0, 5).answer(&g));
        assert!(KgQuestion::TeamAccess(2, 5).answer(&g));
        let mut g2 = g.clone();
        g2.has_access.clear();
        assert!(!KgQuestion::TeamAccess(0, 5).answer(&g2));
    }

    #[test]
    fn reporting_is_a_single_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let g = gen_graph(&mut rng, 40, 0.5);
            let roots = g.of_kind(EntityKind::Person).into_iter().filter(|&p| g.boss[p].is_none()).count();
            assert_eq!(roots, 1);
            let names: BTreeSet<&str> = g.entities.iter().map(|e| e.name.as_str()).collect();
            assert_eq!(names.len(), g.entities.len());
        }
    }

    #[test]
    fn splits_are_exactly_balanced() {
        let spec = TaskSpec::new(super::super::Task::KgQa, 1).with_counts(10, 2, 2);
        let recs = gen_kgqa(&spec, Split::Train).unwrap();
        assert_eq!(recs.len(), 60);
        assert_eq!(recs.iter().filter(|r| r.label == "Yes").count(), 30);
    }

    #[test]
    fn size_range_is_checked() {
        let spec = TaskSpec::new(super::super::Task::KgQa, 1).with_sizes(5, 40);
        assert!(matches!(gen_kgqa(&spec, Split::Train), Err(DataError::InvalidSpec(_))));
    }
}
