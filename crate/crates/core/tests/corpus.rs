use std::collections::BTreeSet;

use convey_core::dsl::{parse_script, read_blocks, render_script, ParseOptions};
use convey_core::engine::{
    replay, start_session, submit_answer, EngineError, Selection, Timestamp, TranscriptEntry,
};
use convey_core::flow::{
    deserialize, reachable_questions, serialize, validate_graph, CodingRange, NodeId, Status,
    SurveyGraph, Widget,
};
use convey_core::store::{records_to_csv, ResponseRecord};

const MOBILE: &str = include_str!("../../../corpus/mobile_banking.survey");
const MOTIVATION: &str = include_str!("../../../corpus/motivation_informal.survey");

fn published(src: &str) -> SurveyGraph {
    let mut g = parse_script(src).expect("corpus parses");
    g.status = Status::Published;
    g
}

fn guarded_nodes(src: &str) -> BTreeSet<NodeId> {
    let (blocks, errors) = read_blocks(src, CodingRange::default());
    assert!(errors.is_empty());
    blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.guard.is_some())
        .map(|(i, _)| NodeId(format!("n{}", i + 1)))
        .collect()
}

/// The intro acknowledgement followed by one code per coded question.
fn mobile_answers(codes: [i64; 7]) -> Vec<Selection> {
    std::iter::once(Selection::Option("n5".into()))
        .chain(codes.into_iter().map(Selection::Value))
        .collect()
}

#[test]
fn mobile_banking_structure() {
    let g = parse_script(MOBILE).unwrap();
    assert!(validate_graph(&g).is_ok());
    let questions: Vec<_> = g.nodes.iter().filter(|n| n.is_question()).collect();
    assert_eq!(questions.len(), 8);
    let labels: BTreeSet<_> = questions
        .iter()
        .filter_map(|q| q.latent_variable.as_deref())
        .collect();
    assert_eq!(
        labels,
        BTreeSet::from([
            "Firm reputation (bank)",
            "Firm reputation (mobile)",
            "Initial trust",
            "Perceived structural assurance",
            "Propensity to trust",
            "Relative benefits",
            "Usage intention",
        ])
    );
    assert_eq!(reachable_questions(&g).unwrap().len(), 8);

    // questions whose branches carry guarded blocks
    let guarded = guarded_nodes(MOBILE);
    let index = g.index();
    let with_guards: BTreeSet<&str> = questions
        .iter()
        .filter(|q| {
            index
                .options(&q.id)
                .iter()
                .any(|o| index.successors(&o.id).any(|n| guarded.contains(&n.id)))
        })
        .filter_map(|q| q.latent_variable.as_deref())
        .collect();
    assert_eq!(with_guards.len(), 6);
    assert!(!with_guards.contains("Usage intention"));
}

#[test]
fn motivation_structure() {
    let g = parse_script(MOTIVATION).unwrap();
    assert!(validate_graph(&g).is_ok());
    let questions: Vec<_> = g.nodes.iter().filter(|n| n.is_question()).collect();
    let coded = questions.iter().filter(|q| !q.is_free_text()).count();
    let free = questions.iter().filter(|q| q.is_free_text()).count();
    assert_eq!((coded, free), (21, 1));
    let widgets: BTreeSet<_> = questions.iter().filter_map(|q| q.widget).collect();
    assert_eq!(
        widgets,
        BTreeSet::from([
            Widget::Options,
            Widget::StarRating,
            Widget::Emoji,
            Widget::Slide,
            Widget::FreeText
        ])
    );
    assert_eq!(
        questions
            .iter()
            .filter(|q| q.latent_variable.as_deref() == Some("hedonism"))
            .count(),
        2
    );
}

#[test]
fn corpus_round_trips() {
    for src in [MOBILE, MOTIVATION] {
        let g = parse_script(src).unwrap();
        assert_eq!(deserialize(&serialize(&g).unwrap()).unwrap(), g);
        let rendered = render_script(&g).unwrap();
        assert_eq!(parse_script_same(&rendered, &g), g);
    }
}

fn parse_script_same(src: &str, like: &SurveyGraph) -> SurveyGraph {
    convey_core::dsl::parse_script_with(src, &ParseOptions::from_graph(like)).unwrap()
}

#[test]
fn mobile_banking_chat() {
    let g = published(MOBILE);
    let (mut s, run) = start_session(&g, "s", Timestamp(0)).unwrap();
    let contents: Vec<_> = run.messages.iter().map(|m| m.content.as_str()).collect();
    assert_eq!(contents.len(), 4);
    assert_eq!(contents[3], "Are you ok with this?");

    submit_answer(&mut s, &g, &Selection::Option("n5".into()), Timestamp(1)).unwrap();
    let mut alt = s.clone();
    let run = submit_answer(&mut s, &g, &Selection::Value(1), Timestamp(2)).unwrap();
    assert!(run.messages[0]
        .content
        .starts_with("You should think about changing provider"));
    let run = submit_answer(&mut alt, &g, &Selection::Value(3), Timestamp(2)).unwrap();
    assert!(run.messages[0].content.starts_with("It seems that today"));
    assert!(matches!(
        submit_answer(&mut alt, &g, &Selection::Value(9), Timestamp(3)),
        Err(EngineError::InvalidSelection { .. })
    ));
}

#[test]
fn replays_are_identical() {
    let g = published(MOBILE);
    let answers = mobile_answers([1, 1, 5, 1, 1, 1, 1]);
    let (s, first) = replay(&g, "a", &answers).unwrap();
    assert!(s.is_finished());
    for _ in 0..100 {
        let (_, again) = replay(&g, "b", &answers).unwrap();
        assert_eq!(again.to_string(), first.to_string());
    }
}

#[test]
fn all_low_and_all_high_differ_only_at_guarded_texts() {
    let g = published(MOBILE);
    let guarded = guarded_nodes(MOBILE);
    let bot = |codes| {
        let (_, t) = replay(&g, "x", &mobile_answers(codes)).unwrap();
        t.entries
            .into_iter()
            .filter_map(|e| match e {
                TranscriptEntry::Bot(m) => Some(m),
                TranscriptEntry::Respondent { .. } => None,
            })
            .collect::<Vec<_>>()
    };
    let low = bot([1; 7]);
    let high = bot([5; 7]);
    assert_eq!(low.len(), high.len());
    let mut differing = 0;
    for (a, b) in low.iter().zip(&high) {
        let conditional = guarded.contains(&a.node_id) || guarded.contains(&b.node_id);
        assert_eq!(
            a.content != b.content,
            conditional,
            "{} / {}",
            a.content,
            b.content
        );
        differing += usize::from(conditional);
    }
    assert_eq!(differing, 6);
}

#[test]
fn recorded_values_match_the_chosen_options() {
    let g = published(MOBILE);
    let index = g.index();
    for codes in [
        [1, 1, 5, 1, 1, 1, 1],
        [5, 3, 1, 4, 2, 3, 5],
        [2, 5, 3, 3, 4, 5, 1],
    ] {
        let (s, _) = replay(&g, "x", &mobile_answers(codes)).unwrap();
        assert_eq!(s.answers.len(), 8);
        // walk the graph by hand along the recorded choices
        let mut path = Vec::new();
        let mut cur = Some(g.entry.clone());
        let mut answers = s.answers.iter();
        while let Some(id) = cur {
            let node = g.node(&id).unwrap();
            cur = if node.is_question() {
                path.push(id.clone());
                let a = answers.next().unwrap();
                let option = g.node(&a.selected[0]).unwrap();
                assert_eq!(a.value, option.value);
                index.next(&option.id).map(|n| n.id.clone())
            } else {
                index.next(&id).map(|n| n.id.clone())
            };
        }
        let asked: Vec<_> = s.answers.iter().map(|a| a.question_id.clone()).collect();
        assert_eq!(asked, path);
    }
}

#[test]
fn full_session_exports_eight_rows() {
    let g = published(MOBILE);
    let (s, _) = replay(&g, "s1", &mobile_answers([3; 7])).unwrap();
    let records: Vec<_> = s
        .answers
        .iter()
        .map(|a| ResponseRecord::from_event(&s, a))
        .collect();
    let csv = records_to_csv(&g, &records);
    assert_eq!(csv.lines().count(), 1 + 8);
}

#[test]
fn corpus_parse_is_fast() {
    let start = std::time::Instant::now();
    for _ in 0..10 {
        parse_script(MOBILE).unwrap();
        parse_script(MOTIVATION).unwrap();
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
