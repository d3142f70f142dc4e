//! Deterministic synthetic fixtures: a full-scale knowledge hierarchy, a
//! corpus of lattices with their auxiliary increment problems, and a
//! benchmark item set. These stand in for the real datasets, which are not
//! shipped; every generator is a pure function of its seed.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ingest_parts, AxisSet, Corpus, CorpusError, DifficultyCoordinate, DifficultyLattice, Problem,
    VariantGroup, VariantKind,
};
use crate::eval::EvalItem;
use crate::knowledge::{
    HierarchyNode, KnowledgeAnnotation, KnowledgeHierarchy, PrincipleEntry, PrincipleKind,
};
use crate::policy::{task_for_answer, SyntheticTask};
use crate::rng::substream;

/// Leaf count of the full-scale hierarchy fixture.
pub const FULL_LEAVES: usize = 491;
/// Principle count of the full-scale hierarchy fixture.
pub const FULL_PRINCIPLES: usize = 1819;

const DOMAINS: [(&str, &[&str]); 4] = [
    (
        "Foundational Skills",
        &["Number Operations", "Fractions and Decimals", "Measurement"],
    ),
    (
        "Probability and Statistics",
        &["Counting Principles", "Probability", "Data and Statistics"],
    ),
    (
        "Geometry",
        &[
            "Plane Geometry",
            "Solid Geometry",
            "Analytic Geometry",
            "Transformations",
        ],
    ),
    (
        "Algebra",
        &["Expressions and Equations", "Functions", "Sequences and Series"],
    ),
];

const PRINCIPLE_KINDS: [PrincipleKind; 3] = [
    PrincipleKind::Definition,
    PrincipleKind::Theorem,
    PrincipleKind::Application,
];

/// Full-scale hierarchy: 4 domains, 13 subdomains, 491 leaves carrying 1,819
/// principles in total.
pub fn full_hierarchy() -> KnowledgeHierarchy {
    KnowledgeHierarchy::from_nodes(full_hierarchy_nodes()).expect("fixture is valid")
}

/// The same fixture as serializable nodes, for writing hierarchy files.
pub fn full_hierarchy_nodes() -> Vec<HierarchyNode> {
    // 13 subdomains x 3 topics x 3 subtopics = 117 slots for 491 leaves
    let subtopic_total = 13 * 3 * 3;
    let base = FULL_LEAVES / subtopic_total;
    let extra = FULL_LEAVES % subtopic_total;
    // 1,819 = 346 leaves with 4 principles + 145 with 3
    let four_principle_leaves = FULL_PRINCIPLES - 3 * FULL_LEAVES;

    let mut leaf_counter = 0usize;
    let mut principle_counter = 0usize;
    let mut subtopic_counter = 0usize;
    let mut roots = Vec::new();
    for (d, (domain, subdomains)) in DOMAINS.iter().enumerate() {
        let mut domain_children = Vec::new();
        for (s, subdomain) in subdomains.iter().enumerate() {
            let mut subdomain_children = Vec::new();
            for t in 0..3 {
                let mut topic_children = Vec::new();
                for u in 0..3 {
                    let quota = base + usize::from(subtopic_counter < extra);
                    subtopic_counter += 1;
                    let mut leaves = Vec::new();
                    for _ in 0..quota {
                        leaf_counter += 1;
                        let principle_quota = if leaf_counter <= four_principle_leaves {
                            4
                        } else {
                            3
                        };
                        let principles = (0..principle_quota)
                            .map(|p| {
                                principle_counter += 1;
                                PrincipleEntry {
                                    id: format!("p{principle_counter:04}"),
                                    kind: PRINCIPLE_KINDS[p % 3],
                                    statement: format!(
                                        "{} statement {p} for concept {leaf_counter}",
                                        PRINCIPLE_KINDS[p % 3]
                                    ),
                                }
                            })
                            .collect();
                        leaves.push(HierarchyNode {
                            id: format!("k{leaf_counter:03}"),
                            name: format!("{subdomain} concept {leaf_counter}"),
                            level: 5,
                            principles,
                            children: vec![],
                        });
                    }
                    topic_children.push(HierarchyNode {
                        id: format!("d{d}.s{s}.t{t}.u{u}"),
                        name: format!("{subdomain} subtopic {}", u + 1),
                        level: 4,
                        principles: vec![],
                        children: leaves,
                    });
                }
                subdomain_children.push(HierarchyNode {
                    id: format!("d{d}.s{s}.t{t}"),
                    name: format!("{subdomain} topic {}", t + 1),
                    level: 3,
                    principles: vec![],
                    children: topic_children,
                });
            }
            domain_children.push(HierarchyNode {
                id: format!("d{d}.s{s}"),
                name: subdomain.to_string(),
                level: 2,
                principles: vec![],
                children: subdomain_children,
            });
        }
        roots.push(HierarchyNode {
            id: format!("d{d}"),
            name: domain.to_string(),
            level: 1,
            principles: vec![],
            children: domain_children,
        });
    }
    roots
}

/// Small hierarchy for unit tests and quick demos: 12 leaves, 24 principles.
pub fn small_hierarchy() -> KnowledgeHierarchy {
    let mut leaf_counter = 0usize;
    let mut principle_counter = 0usize;
    let subtopics: Vec<HierarchyNode> = (0..2)
        .map(|t| {
            let children: Vec<HierarchyNode> = (0..2)
                .map(|u| {
                    let leaves: Vec<HierarchyNode> = (0..3)
                        .map(|_| {
                            leaf_counter += 1;
                            let principles = (0..2)
                                .map(|p| {
                                    principle_counter += 1;
                                    PrincipleEntry {
                                        id: format!("p{principle_counter:02}"),
                                        kind: PRINCIPLE_KINDS[p % 3],
                                        statement: format!("statement {principle_counter}"),
                                    }
                                })
                                .collect();
                            HierarchyNode {
                                id: format!("k{leaf_counter:02}"),
                                name: format!("concept {leaf_counter}"),
                                level: 5,
                                principles,
                                children: vec![],
                            }
                        })
                        .collect();
                    HierarchyNode {
                        id: format!("t{t}.u{u}"),
                        name: format!("subtopic {t}.{u}"),
                        level: 4,
                        principles: vec![],
                        children: leaves,
                    }
                })
                .collect();
            HierarchyNode {
                id: format!("t{t}"),
                name: format!("topic {t}"),
                level: 3,
                principles: vec![],
                children,
            }
        })
        .collect();
    let root = HierarchyNode {
        id: "d0".into(),
        name: "Geometry".into(),
        level: 1,
        principles: vec![],
        children: vec![HierarchyNode {
            id: "d0.s0".into(),
            name: "Plane Geometry".into(),
            level: 2,
            principles: vec![],
            children: subtopics,
        }],
    };
    KnowledgeHierarchy::from_nodes(vec![root]).expect("fixture is valid")
}

/// A generated corpus plus the synthetic task behind every problem.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub tasks: BTreeMap<String, SyntheticTask>,
}

/// Derive the toy task for one problem; the pipeline uses this same mapping
/// for external corpora.
pub fn task_for_problem(problem: &Problem, seed: u64) -> SyntheticTask {
    task_for_answer(&problem.id, &problem.answer, problem.difficulty, seed)
}

fn digits(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

/// Generate `n_lattices` full difficulty lattices with image/question variant
/// groups and the auxiliary problems the increment queries need.
pub fn synthetic_corpus(
    store: &KnowledgeHierarchy,
    n_lattices: usize,
    variants_per_group: usize,
    seed: u64,
) -> Result<SyntheticCorpus, CorpusError> {
    let leaves: Vec<String> = store.leaves().into_iter().map(str::to_string).collect();
    assert!(leaves.len() >= 6, "store too small for lattices");
    let variants = variants_per_group.max(2);

    let mut problems: Vec<Problem> = Vec::new();
    let mut groups = Vec::new();
    let mut lattices = Vec::new();
    let mut tasks = BTreeMap::new();

    for i in 0..n_lattices {
        let seed_id = format!("seed-{i:03}");
        let mut rng = substream(seed, &["corpus", &seed_id]);
        let window = (i * 6) % (leaves.len() - 5);
        let chain: Vec<&str> = leaves[window..window + 6].iter().map(String::as_str).collect();
        let principle = store
            .point(chain[3])
            .expect("leaf exists")
            .principle_ids
            .first()
            .expect("leaf has principles")
            .clone();
        let question = format!("Using the figure, determine quantity Q{i}.");

        let mut push = |problems: &mut Vec<Problem>,
                        tasks: &mut BTreeMap<String, SyntheticTask>,
                        id: String,
                        question: String,
                        answer: String,
                        image: Option<String>,
                        coord: DifficultyCoordinate,
                        points: &[&str]| {
            let problem = Problem {
                id: id.clone(),
                seed_id: seed_id.clone(),
                question,
                answer,
                image_ref: image,
                ggb_ref: Some(format!("ggb-{id}")),
                annotation: KnowledgeAnnotation {
                    problem_id: id.clone(),
                    step_points: points.iter().map(|s| s.to_string()).collect(),
                    principle_ids: vec![principle.clone()],
                },
                difficulty: coord,
                knowledge_count: points.len(),
            };
            tasks.insert(id.clone(), task_for_problem(&problem, seed));
            problems.push(problem);
            id
        };

        // the 8 lattice nodes; s-chain knowledge counts run 4 -> 5 -> 6
        let node_specs: [(AxisSet, DifficultyCoordinate, usize, u32); 8] = [
            (AxisSet::ALL[0], DifficultyCoordinate::new(0, false, false), 4, 1),
            (AxisSet::ALL[1], DifficultyCoordinate::new(1, false, false), 5, 2),
            (AxisSet::ALL[2], DifficultyCoordinate::new(0, true, false), 4, 1),
            (AxisSet::ALL[3], DifficultyCoordinate::new(0, false, true), 4, 1),
            (AxisSet::ALL[4], DifficultyCoordinate::new(2, true, false), 6, 3),
            (AxisSet::ALL[5], DifficultyCoordinate::new(2, false, true), 6, 3),
            (AxisSet::ALL[6], DifficultyCoordinate::new(0, true, true), 4, 1),
            (AxisSet::ALL[7], DifficultyCoordinate::new(2, true, true), 6, 3),
        ];
        let mut nodes = BTreeMap::new();
        for (axes, coord, k_count, answer_len) in node_specs {
            let id = if axes == AxisSet::SEED {
                seed_id.clone()
            } else {
                format!("{seed_id}-{}", axes.key())
            };
            let answer = digits(&mut rng, answer_len as usize);
            let image = Some(format!("img-{seed_id}-{}", axes.key()));
            let id = push(
                &mut problems,
                &mut tasks,
                id,
                question.clone(),
                answer,
                image,
                coord,
                &chain[..k_count],
            );
            nodes.insert(axes, id);
        }
        lattices.push(DifficultyLattice {
            seed_id: seed_id.clone(),
            nodes,
        });

        // image-variant group: same question, fresh diagrams, distinct answers
        let mut members = vec![seed_id.clone()];
        for t in 1..variants {
            let id = format!("{seed_id}-iv{t}");
            let answer = digits(&mut rng, 1);
            push(
                &mut problems,
                &mut tasks,
                id.clone(),
                question.clone(),
                answer,
                Some(format!("img-{seed_id}-iv{t}")),
                DifficultyCoordinate::seed(),
                &chain[..4],
            );
            members.push(id);
        }
        groups.push(VariantGroup {
            kind: VariantKind::ImageVariant,
            principle_id: principle.clone(),
            member_ids: members,
        });

        // question-variant group: the seed diagram reused for a second question
        let qv_id = format!("{seed_id}-qv1");
        push(
            &mut problems,
            &mut tasks,
            qv_id.clone(),
            format!("From the same figure, determine quantity R{i}."),
            digits(&mut rng, 1),
            Some(format!("img-{seed_id}-seed")),
            DifficultyCoordinate::seed(),
            &chain[2..3],
        );
        groups.push(VariantGroup {
            kind: VariantKind::QuestionVariant,
            principle_id: principle.clone(),
            member_ids: vec![seed_id.clone(), qv_id],
        });

        // knowledge increment pool: seed-coordinate problems isolating the
        // rank-1 point chain[4]
        push(
            &mut problems,
            &mut tasks,
            format!("{seed_id}-kx1"),
            format!("Practice the new concept behind Q{i}."),
            digits(&mut rng, 1),
            None,
            DifficultyCoordinate::seed(),
            &chain[4..5],
        );
        push(
            &mut problems,
            &mut tasks,
            format!("{seed_id}-kx2"),
            format!("Combine the new concept behind Q{i} with earlier steps."),
            digits(&mut rng, 1),
            None,
            DifficultyCoordinate::seed(),
            &[chain[2], chain[3], chain[4]],
        );

        // modality increment pool: the rank-1 knowledge set with exactly one
        // extra axis applied, plus the rank-2 set for the final transition
        push(
            &mut problems,
            &mut tasks,
            format!("{seed_id}-mv"),
            format!("Read the busier diagram for Q{i}."),
            digits(&mut rng, 2),
            Some(format!("img-{seed_id}-mv")),
            DifficultyCoordinate::new(1, true, false),
            &chain[..5],
        );
        push(
            &mut problems,
            &mut tasks,
            format!("{seed_id}-mc"),
            format!("Solve the story form of Q{i}."),
            digits(&mut rng, 2),
            Some(format!("img-{seed_id}-mc")),
            DifficultyCoordinate::new(1, false, true),
            &chain[..5],
        );
        push(
            &mut problems,
            &mut tasks,
            format!("{seed_id}-mvc"),
            format!("Solve the full story diagram for Q{i}."),
            digits(&mut rng, 3),
            Some(format!("img-{seed_id}-mvc")),
            DifficultyCoordinate::new(2, true, true),
            &chain[..6],
        );
    }

    let corpus = ingest_parts(problems, groups, lattices, store)?;
    Ok(SyntheticCorpus { corpus, tasks })
}

/// Benchmark fixture with the reference level distribution: 62 items at 1-3
/// steps, 30 at 4-6, 8 at 7-10, predictions correct on a fixed 4-in-5
/// pattern. Returns the items and the intended correctness flags.
pub fn eval_fixture(seed: u64) -> (Vec<EvalItem>, Vec<bool>) {
    let mut rng = substream(seed, &["eval-fixture"]);
    let mut items = Vec::with_capacity(100);
    let mut flags = Vec::with_capacity(100);
    let step_plan: Vec<u32> = (0..62)
        .map(|j| 1 + (j % 3) as u32)
        .chain((0..30).map(|j| 4 + (j % 3) as u32))
        .chain((0..8).map(|j| 7 + (j % 4) as u32))
        .collect();
    for (j, steps) in step_plan.into_iter().enumerate() {
        let (domain, subdomains) = DOMAINS[j % 4];
        let gold = digits(&mut rng, 1 + (j % 3));
        let correct = j % 5 != 0;
        let prediction = if correct {
            gold.clone()
        } else {
            format!("not-{gold}")
        };
        items.push(EvalItem {
            problem_id: format!("eval-{j:03}"),
            reasoning_steps: steps,
            domain: domain.to_string(),
            subdomain: subdomains[j % subdomains.len()].to_string(),
            prediction,
            gold,
        });
        flags.push(correct);
    }
    (items, flags)
}

/// Items and predictions in their on-disk row forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalFixtureFiles {
    pub items: Vec<crate::eval::ItemRow>,
    pub predictions: Vec<crate::eval::PredictionRow>,
}

/// Split an eval fixture into its two JSONL file bodies.
pub fn eval_fixture_files(seed: u64) -> EvalFixtureFiles {
    let (items, _) = eval_fixture(seed);
    EvalFixtureFiles {
        items: items
            .iter()
            .map(|i| crate::eval::ItemRow {
                problem_id: i.problem_id.clone(),
                reasoning_steps: i.reasoning_steps,
                domain: i.domain.clone(),
                subdomain: i.subdomain.clone(),
                gold: i.gold.clone(),
            })
            .collect(),
        predictions: items
            .iter()
            .map(|i| crate::eval::PredictionRow {
                problem_id: i.problem_id.clone(),
                prediction: i.prediction.clone(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_lattice;

    #[test]
    fn full_hierarchy_mirrors_reference_scale() {
        let store = full_hierarchy();
        let counts = store.counts();
        assert_eq!(counts.leaves, FULL_LEAVES);
        assert_eq!(counts.principles, FULL_PRINCIPLES);
        assert!(store.warnings(Some(FULL_PRINCIPLES)).is_empty());
        assert_eq!(store.roots().len(), 4);
        let subdomains: usize = store.roots().iter().map(|r| store.children(r).len()).sum();
        assert_eq!(subdomains, 13);
    }

    #[test]
    fn principle_counts_sum_over_leaves() {
        let store = full_hierarchy();
        let total: usize = store
            .points()
            .filter(|p| p.level == 5)
            .map(|p| p.principle_ids.len())
            .sum();
        assert_eq!(total, store.counts().principles);
    }

    #[test]
    fn synthetic_corpus_lattices_validate() {
        let store = small_hierarchy();
        let built = synthetic_corpus(&store, 2, 3, 11).unwrap();
        assert_eq!(built.corpus.lattice_count(), 2);
        for lattice in built.corpus.lattices() {
            let report = validate_lattice(lattice, &built.corpus);
            assert!(report.passed(), "{report:?}");
        }
        assert_eq!(built.corpus.len(), built.tasks.len());
        // 8 lattice nodes + 2 image variants + 1 question variant
        // + 2 knowledge aux + 3 modality aux = 16 per lattice
        assert_eq!(built.corpus.len(), 32);
        assert_eq!(built.corpus.principle_groups().len(), 2);
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let store = small_hierarchy();
        let a = synthetic_corpus(&store, 2, 3, 5).unwrap();
        let b = synthetic_corpus(&store, 2, 3, 5).unwrap();
        let pa: Vec<_> = a.corpus.problems().collect();
        let pb: Vec<_> = b.corpus.problems().collect();
        assert_eq!(pa, pb);
        assert_eq!(a.tasks, b.tasks);
    }

    #[test]
    fn eval_fixture_distribution() {
        let (items, flags) = eval_fixture(1);
        assert_eq!(items.len(), 100);
        let l1 = items.iter().filter(|i| i.reasoning_steps <= 3).count();
        let l2 = items
            .iter()
            .filter(|i| (4..=6).contains(&i.reasoning_steps))
            .count();
        let l3 = items.iter().filter(|i| i.reasoning_steps >= 7).count();
        assert_eq!((l1, l2, l3), (62, 30, 8));
        assert_eq!(flags.iter().filter(|&&f| f).count(), 80);
        let table = crate::eval::DomainTable::from_hierarchy(&full_hierarchy());
        for item in &items {
            table.validate_item(item).unwrap();
        }
    }
}
