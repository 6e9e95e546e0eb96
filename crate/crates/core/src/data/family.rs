//! Family lineages grown from a founding couple, with multi-hop attribute questions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Split, TaskSpec, PROMPT_TEXT};
use crate::graph::{QaRecord, TextAttributedGraph};

const MALE_NAMES: [&str; 30] = [
    "Aaron", "Benjamin", "Caleb", "Daniel", "Edward", "Felix", "George", "Henry", "Isaac", "Jacob", "Kevin", "Liam",
    "Marcus", "Nathan", "Oliver", "Peter", "Quentin", "Robert", "Samuel", "Thomas", "Victor", "Walter", "Xavier",
    "Arthur", "Brian", "Charles", "David", "Ethan", "Frank", "Gavin",
];
const FEMALE_NAMES: [&str; 30] = [
    "Alice", "Beatrice", "Clara", "Diana", "Eleanor", "Fiona", "Grace", "Hannah", "Irene", "Julia", "Katherine", "Laura",
    "Maria", "Nora", "Olivia", "Paula", "Rachel", "Sophia", "Teresa", "Ursula", "Vera", "Wendy", "Yvonne", "Zoe",
    "Amelia", "Bella", "Chloe", "Daisy", "Emma", "Flora",
];
const SURNAMES: [&str; 20] = [
    "Anderson", "Brooks", "Carter", "Dawson", "Ellis", "Fischer", "Garcia", "Hughes", "Ingram", "Jensen", "Keller",
    "Lambert", "Morgan", "Novak", "Owens", "Parker", "Quinn", "Reyes", "Sutton", "Turner",
];
const COLORS: [&str; 10] = ["red", "blue", "green", "yellow", "purple", "orange", "black", "white", "pink", "brown"];
const FOODS: [&str; 10] = ["pizza", "sushi", "pasta", "tacos", "curry", "salad", "soup", "steak", "noodles", "dumplings"];
const CITIES: [&str; 10] = ["Paris", "Tokyo", "Lima", "Cairo", "Oslo", "Denver", "Madrid", "Seoul", "Dublin", "Sydney"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Person {
    pub first: String,
    pub last: String,
    pub gender: Gender,
    pub born: i32,
    pub color: String,
    pub food: String,
    pub city: String,
}

impl Person {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first, self.last)
    }

    pub fn text(&self) -> String {
        format!(
            "{}; gender: {}; born: {}; favorite color: {}; favorite food: {}; favorite city: {}",
            self.full_name(),
            self.gender.as_str(),
            self.born,
            self.color,
            self.food,
            self.city
        )
    }

    pub fn attribute(&self, a: Attribute) -> String {
        match a {
            Attribute::Color => self.color.clone(),
            Attribute::Food => self.food.clone(),
            Attribute::City => self.city.clone(),
            Attribute::BirthYear => self.born.to_string(),
        }
    }
}

/// People plus SPOUSE pairs and CHILD links; person `i` becomes graph node `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FamilyTree {
    pub people: Vec<Person>,
    pub spouse: Vec<Option<usize>>,
    /// (father, mother) for everyone born into the tree.
    pub parents: Vec<Option<(usize, usize)>>,
}

impl FamilyTree {
    fn push(&mut self, p: Person) -> usize {
        self.people.push(p);
        self.spouse.push(None);
        self.parents.push(None);
        self.people.len() - 1
    }

    fn marry(&mut self, a: usize, b: usize) {
        self.spouse[a] = Some(b);
        self.spouse[b] = Some(a);
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.people.len()).filter(|&c| self.parents[c].is_some_and(|(f, m)| f == i || m == i)).collect()
    }

    /// SPOUSE edges in both directions, CHILD edges from each parent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for i in 0..self.people.len() {
            if let Some(s) = self.spouse[i] {
                e.push((i, s));
            }
            if let Some((f, m)) = self.parents[i] {
                e.push((f, i));
                e.push((m, i));
            }
        }
        e.sort_unstable();
        e
    }

    /// Sorted oldest first; equal birth years fall back to node order.
    fn by_age(&self, mut ids: Vec<usize>, gender: Gender) -> Vec<usize> {
        ids.retain(|&i| self.people[i].gender == gender);
        ids.sort_by_key(|&i| (self.people[i].born, i));
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Color,
    Food,
    City,
    BirthYear,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Color, Attribute::Food, Attribute::City, Attribute::BirthYear];

    fn phrase(self) -> &'static str {
        match self {
            Attribute::Color => "favorite color",
            Attribute::Food => "favorite food",
            Attribute::City => "favorite city",
            Attribute::BirthYear => "birth year",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Spouse,
    Father,
    Mother,
    /// 1-based rank by age among children of that gender.
    Child(usize, Gender),
    Grandchild(usize, Gender),
}

impl Relation {
    fn phrase(self) -> String {
        let ordinal = |k: usize| match k {
            1 => "oldest".to_string(),
            2 => "2nd oldest".to_string(),
            3 => "3rd oldest".to_string(),
            k => format!("{k}th oldest"),
        };
        match self {
            Relation::Spouse => "spouse".into(),
            Relation::Father => "father".into(),
            Relation::Mother => "mother".into(),
            Relation::Child(k, Gender::Male) => format!("{} son", ordinal(k)),
            Relation::Child(k, Gender::Female) => format!("{} daughter", ordinal(k)),
            Relation::Grandchild(k, Gender::Male) => format!("{} grandson", ordinal(k)),
            Relation::Grandchild(k, Gender::Female) => format!("{} granddaughter", ordinal(k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilyQuery {
    pub anchor: usize,
    pub relation: Relation,
    pub attribute: Attribute,
}

fn resolve(t: &FamilyTree, q: &FamilyQuery) -> Option<usize> {
    let a = q.anchor;
    let nth = |ids: Vec<usize>, k: usize| ids.get(k.wrapping_sub(1)).copied();
    match q.relation {
        Relation::Spouse => t.spouse[a],
        Relation::Father => t.parents[a].map(|(f, _)| f),
        Relation::Mother => t.parents[a].map(|(_, m)| m),
        Relation::Child(k, g) => nth(t.by_age(t.children(a), g), k),
        Relation::Grandchild(k, g) => {
            let mut gc: Vec<usize> = t.children(a).into_iter().flat_map(|c| t.children(c)).collect();
            gc.sort_unstable();
            gc.dedup();
            nth(t.by_age(gc, g), k)
        }
    }
}

/// Renders `q` as a record over `t`. Anchors must carry a name nobody else in the tree shares.
pub fn family_question(t: &FamilyTree, q: &FamilyQuery) -> Result<QaRecord, DataError> {
    let name = t.people[q.anchor].full_name();
    if t.people.iter().filter(|p| p.full_name() == name).count() > 1 {
        return Err(DataError::AmbiguousAnchor(name));
    }
    let who = resolve(t, q).ok_or(DataError::NoAnswer)?;
    let question = format!("What is the {} of {}'s {}?", q.attribute.phrase(), name, q.relation.phrase());
    let mut texts = vec![PROMPT_TEXT.to_string()];
    texts.extend(t.people.iter().map(Person::text));
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut edges: Vec<(usize, usize)> = t.edges().into_iter().map(|(a, b)| (a + 1, b + 1)).collect();
    edges.push((0, q.anchor + 1));
    let graph = TextAttributedGraph::from_texts(&refs, &edges).map_err(crate::graph::GraphError::Invalid)?;
    Ok(QaRecord { graph, question, label: t.people[who].attribute(q.attribute) })
}

struct NamePool {
    male: Vec<&'static str>,
    female: Vec<&'static str>,
    surnames: Vec<&'static str>,
}

impl NamePool {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self { male: MALE_NAMES.to_vec(), female: FEMALE_NAMES.to_vec(), surnames: SURNAMES.to_vec() };
        p.male.shuffle(rng);
        p.female.shuffle(rng);
        p.surnames.shuffle(rng);
        p
    }

    fn first(&mut self, g: Gender) -> Option<&'static str> {
        match g {
            Gender::Male => self.male.pop(),
            Gender::Female => self.female.pop(),
        }
    }
}

fn person(rng: &mut ChaCha8Rng, pool: &mut NamePool, gender: Gender, last: &str, born: i32) -> Option<Person> {
    Some(Person {
        first: pool.first(gender)?.to_string(),
        last: last.to_string(),
        gender,
        born,
        color: COLORS[rng.random_range(0..COLORS.len())].into(),
        food: FOODS[rng.random_range(0..FOODS.len())].into(),
        city: CITIES[rng.random_range(0..CITIES.len())].into(),
    })
}

fn random_gender(rng: &mut ChaCha8Rng) -> Gender {
    if rng.random_bool(0.5) {
        Gender::Male
    } else {
        Gender::Female
    }
}

/// Grows `generations` generations from a founding couple. First names are drawn without
/// replacement, so every generated name is unique.
pub fn gen_tree(rng: &mut ChaCha8Rng, generations: usize) -> FamilyTree {
    let mut pool = NamePool::new(rng);
    let mut t = FamilyTree::default();
    let family = pool.surnames.pop().expect("surname pool");
    let year = rng.random_range(1900..1940);
    let f = t.push(person(rng, &mut pool, Gender::Male, family, year).expect("name pool"));
    let year_m = year + rng.random_range(-4..=4);
    let m = t.push(person(rng, &mut pool, Gender::Female, family, year_m).expect("name pool"));
    t.marry(f, m);
    let mut couples = vec![(f, m)];
    for gen in 1..generations {
        let mut next = Vec::new();
        for &(f, m) in &couples {
            let base = t.people[f].born.max(t.people[m].born);
            for _ in 0..rng.random_range(1..=3) {
                let g = random_gender(rng);
                let last = t.people[f].last.clone();
                let born = base + rng.random_range(20..=35);
                let Some(p) = person(rng, &mut pool, g, &last, born) else { continue };
                let c = t.push(p);
                t.parents[c] = Some((f, m));
                if gen + 1 < generations && rng.random_bool(0.75) {
                    let sg = if g == Gender::Male { Gender::Female } else { Gender::Male };
                    let born = t.people[c].born + rng.random_range(-4..=4);
                    let Some(sl) = pool.surnames.pop() else { continue };
                    let Some(sp) = person(rng, &mut pool, sg, sl, born) else { continue };
                    let s = t.push(sp);
                    t.marry(c, s);
                    next.push(if g == Gender::Male { (c, s) } else { (s, c) });
                }
            }
        }
        couples = next;
    }
    t
}

fn random_query(rng: &mut ChaCha8Rng, t: &FamilyTree) -> FamilyQuery {
    let anchor = rng.random_range(0..t.people.len());
    let k = rng.random_range(1..=2);
    let relation = match rng.random_range(0..5) {
        0 => Relation::Spouse,
        1 => Relation::Father,
        2 => Relation::Mother,
        3 => Relation::Child(k, random_gender(rng)),
        _ => Relation::Grandchild(k, random_gender(rng)),
    };
    FamilyQuery { anchor, relation, attribute: Attribute::ALL[rng.random_range(0..4)] }
}

/// `spec.sizes` is the range of generation counts.
pub fn gen_family_tree(spec: &TaskSpec, split: Split) -> Result<Vec<QaRecord>, DataError> {
    spec.check_sizes(2, 4)?;
    let mut rng = spec.rng(split);
    let mut out = Vec::with_capacity(spec.count(split));
    while out.len() < spec.count(split) {
        let generations = rng.random_range(spec.sizes.0..=spec.sizes.1);
        let t = gen_tree(&mut rng, generations);
        for _ in 0..32 {
            match family_question(&t, &random_query(&mut rng, &t)) {
                Ok(r) => {
                    out.push(r);
                    break;
                }
                Err(DataError::NoAnswer | DataError::AmbiguousAnchor(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn p(first: &str, g: Gender, born: i32, city: &str) -> Person {
        Person {
            first: first.into(),
            last: "Doe".into(),
            gender: g,
            born,
            color: "red".into(),
            food: "soup".into(),
            city: city.into(),
        }
    }

    /// founders 0,1; children 2 (m, 1950), 3 (f); 2 married to 4; grandsons 5 (1980), 6 (1975), 7 (1975)
    fn fixture() -> FamilyTree {
        let mut t = FamilyTree::default();
        for q in [
            p("Al", Gender::Male, 1920, "Oslo"),
            p("Bea", Gender::Female, 1922, "Lima"),
            p("Cy", Gender::Male, 1950, "Paris"),
            p("Di", Gender::Female, 1952, "Tokyo"),
            p("Eve", Gender::Female, 1951, "Cairo"),
            p("Fin", Gender::Male, 1980, "Seoul"),
            p("Gus", Gender::Male, 1975, "Madrid"),
            p("Hal", Gender::Male, 1975, "Dublin"),
        ] {
            t.push(q);
        }
        t.marry(0, 1);
        t.marry(2, 4);
        t.parents[2] = Some((0, 1));
        t.parents[3] = Some((0, 1));
        for c in 5..8 {
            t.parents[c] = Some((2, 4));
        }
        t
    }

    #[test]
    fn spouse_lookup() {
        let r = family_question(&fixture(), &FamilyQuery { anchor: 2, relation: Relation::Spouse, attribute: Attribute::City })
            .unwrap();
        assert_eq!(r.label, "Cairo");
        assert_eq!(r.question, "What is the favorite city of Cy Doe's spouse?");
    }

    #[test]
    fn second_oldest_grandson_breaks_ties_by_node() {
        let q = FamilyQuery { anchor: 0, relation: Relation::Grandchild(2, Gender::Male), attribute: Attribute::City };
        // 6 and 7 share 1975; node 6 ranks first
        assert_eq!(family_question(&fixture(), &q).unwrap().label, "Dublin");
        let q = FamilyQuery { anchor: 0, relation: Relation::Grandchild(1, Gender::Female), attribute: Attribute::City };
        assert!(matches!(family_question(&fixture(), &q), Err(DataError::NoAnswer)));
    }

    #[test]
    fn duplicate_anchor_is_rejected() {
        let mut t = fixture();
        t.people[3].first = "Cy".into();
        let q = FamilyQuery { anchor: 2, relation: Relation::Father, attribute: Attribute::Food };
        assert!(matches!(family_question(&t, &q), Err(DataError::AmbiguousAnchor(_))));
    }

    #[test]
    fn generated_trees_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t = gen_tree(&mut rng, 3);
            let names: std::collections::HashSet<String> = t.people.iter().map(Person::full_name).collect();
            assert_eq!(names.len(), t.people.len());
            for (i, s) in t.spouse.iter().enumerate() {
                if let Some(s) = *s {
                    assert_eq!(t.spouse[s], Some(i));
                }
            }
            for (i, par) in t.parents.iter().enumerate() {
                if let Some((f, m)) = *par {
                    assert!(t.people[f].born < t.people[i].born && t.people[m].born < t.people[i].born);
                }
            }
        }
    }

    #[test]
    fn one_generation_is_rejected() {
        let spec = TaskSpec::new(super::super::Task::FamilyTree, 0).with_sizes(1, 1);
        assert!(matches!(gen_family_tree(&spec, Split::Train), Err(DataError::InvalidSpec(_))));
    }
}
