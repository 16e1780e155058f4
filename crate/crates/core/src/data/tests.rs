use std::collections::HashMap;

use proptest::prelude::*;

use super::*;

const FIG1_LINE: &str = r#"{"id":"r1","sentence":"The new operating system makes the laptop much easier to use.","target":"operating system","polarity":"positive","implicit":true}"#;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn augmented(id: &str, ca: f64, co: f64) -> Entry {
    Entry::Augmented(AugmentedInstance {
        base: Instance::new(id, "battery died fast", "battery", Polarity::Negative, true).unwrap(),
        aspect: "battery life".into(),
        aspect_confidence: ca,
        opinion: "short".into(),
        opinion_confidence: co,
        refine_epochs_used: 2,
        consensus_reached: true,
    })
}

#[test]
fn load_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "d.jsonl", &format!("{FIG1_LINE}\n"));
    let d = load_jsonl(&p).unwrap();
    assert_eq!(d.len(), 1);
    let i = d.entries()[0].instance();
    assert_eq!(i.target, "operating system");
    assert_eq!(i.polarity, Polarity::Positive);
    assert!(i.implicit);
    assert!(d.entries()[0].augmented().is_none());
}

#[test]
fn load_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "empty.jsonl", "");
    assert!(load_jsonl(&p).unwrap().is_empty());
}

#[test]
fn round_trip_is_byte_identical_for_canonical_input() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{FIG1_LINE}\n{}\n",
        r#"{"id":"r2","sentence":"battery died fast","target":"battery","polarity":"negative","implicit":true,"aspect":"battery life","aspect_confidence":0.85,"opinion":"short","opinion_confidence":0.5,"refine_epochs_used":2,"consensus_reached":true}"#
    );
    let p = write(&dir, "in.jsonl", &text);
    let out = dir.path().join("out.jsonl");
    save_jsonl(&load_jsonl(&p).unwrap(), &out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn save_canonicalizes_field_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "in.jsonl",
        r#"{"polarity":"neutral","target":"menu","implicit":false,"sentence":"We read the menu.","id":"x"}"#,
    );
    let out = dir.path().join("out.jsonl");
    save_jsonl(&load_jsonl(&p).unwrap(), &out).unwrap();
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "{\"id\":\"x\",\"sentence\":\"We read the menu.\",\"target\":\"menu\",\"polarity\":\"neutral\",\"implicit\":false}\n"
    );
}

#[test]
fn save_writes_confidence_and_one_line_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dataset::new("d", vec![augmented("a", 0.85, 0.9), augmented("b", 1.0, 0.5)]).unwrap();
    let out = dir.path().join("out.jsonl");
    save_jsonl(&d, &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"aspect_confidence\":0.85"));
    assert_eq!(load_jsonl(&out).unwrap().entries(), d.entries());
}

#[test]
fn nfc_normalization_on_load() {
    let dir = tempfile::tempdir().unwrap();
    // "cafe" + combining acute accent
    let p = write(
        &dir,
        "in.jsonl",
        "{\"id\":\"n\",\"sentence\":\"cafe\u{0301} visit\",\"target\":\"cafe\u{0301}\",\"polarity\":\"neutral\",\"implicit\":false}\n",
    );
    let d = load_jsonl(&p).unwrap();
    assert_eq!(d.entries()[0].instance().target, "caf\u{e9}");
}

#[test]
fn malformed_line_names_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "bad.jsonl", &format!("{FIG1_LINE}\n{{not json\n"));
    match load_jsonl(&p) {
        Err(DataError::Json { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_polarity_names_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "bad.jsonl", &FIG1_LINE.replace("\"positive\"", "\"mixed\""));
    let err = load_jsonl(&p).unwrap_err();
    assert!(matches!(&err, DataError::UnknownPolarity(v) if v == "mixed"), "{err}");
}

#[test]
fn duplicate_id_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "dup.jsonl", &format!("{FIG1_LINE}\n{FIG1_LINE}\n"));
    assert!(matches!(load_jsonl(&p), Err(DataError::DuplicateId(id)) if id == "r1"));
}

#[test]
fn partial_augmentation_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "p.jsonl", &FIG1_LINE.replace("}", ",\"aspect\":\"os\"}"));
    assert!(matches!(load_jsonl(&p), Err(DataError::Schema { line: 1, .. })));
}

#[test]
fn strict_rejects_and_lenient_clips_low_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let line = r#"{"id":"c","sentence":"s t","target":"t","polarity":"negative","implicit":false,"aspect":"a","aspect_confidence":0.3,"opinion":"o","opinion_confidence":0.9}"#;
    let p = write(&dir, "c.jsonl", line);
    assert!(load_jsonl(&p).is_err());
    let (d, stats) = load_jsonl_with(&p, Validation::Lenient).unwrap();
    assert_eq!(stats.clipped_confidences, 1);
    let a = d.entries()[0].augmented().unwrap();
    assert_eq!(a.aspect_confidence, 0.5);
    assert_eq!(a.opinion_confidence, 0.9);
}

const XML_FIXTURE: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<sentences>
  <sentence id="1">
    <text>The pizza was great but the service was slow.</text>
    <aspectTerms>
      <aspectTerm term="pizza" polarity="positive" from="4" to="9"/>
      <aspectTerm term="service" polarity="negative" from="28" to="35"/>
    </aspectTerms>
  </sentence>
  <sentence id="2">
    <text>The wine list is interesting but pricey.</text>
    <aspectTerms>
      <aspectTerm term="wine list" polarity="conflict" from="4" to="13"/>
    </aspectTerms>
  </sentence>
  <sentence id="3">
    <text>We waited an hour for the table.</text>
    <aspectTerms>
      <aspectTerm term="table" polarity="negative" from="26" to="31"/>
    </aspectTerms>
  </sentence>
</sentences>"#;

#[test]
fn semeval_fan_out_and_conflict_drop() {
    let out = parse_semeval_xml(XML_FIXTURE, None, &OpinionLexicon::default()).unwrap();
    // Sentence 1 fans out to two instances, sentence 2 is all conflict, sentence 3 has one.
    assert_eq!(out.dropped_conflict, 1);
    let ids: Vec<_> = out.dataset.iter().map(|e| e.id().to_string()).collect();
    assert_eq!(ids, ["1#0", "1#1", "3#0"]);
    let pols: Vec<_> = out.dataset.instances().map(|i| i.polarity).collect();
    assert_eq!(pols, [Polarity::Positive, Polarity::Negative, Polarity::Negative]);
    // "great" and "slow" are opinion words; sentence 3 has none
    let implicit: Vec<_> = out.dataset.instances().map(|i| i.implicit).collect();
    assert_eq!(implicit, [false, false, true]);
}

#[test]
fn semeval_flags_override_lexicon() {
    let flags: HashMap<String, bool> =
        [("1#0", true), ("1#1", false), ("3#0", false)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let out = parse_semeval_xml(XML_FIXTURE, Some(&flags), &OpinionLexicon::default()).unwrap();
    let implicit: Vec<_> = out.dataset.instances().map(|i| i.implicit).collect();
    assert_eq!(implicit, [true, false, false]);
}

#[test]
fn semeval_empty_root() {
    let out = parse_semeval_xml("<sentences/>", None, &OpinionLexicon::default()).unwrap();
    assert!(out.dataset.is_empty());
    assert_eq!(out.dropped_conflict, 0);
}

#[test]
fn semeval_malformed_xml_has_location() {
    let err = parse_semeval_xml("<sentences>\n<sentence>", None, &OpinionLexicon::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, DataError::Xml(_)));
    assert!(msg.contains(':'), "{msg}");
}

#[test]
fn semeval_missing_polarity() {
    let xml = r#"<sentences><sentence id="9"><text>ok food</text><aspectTerms><aspectTerm term="food"/></aspectTerms></sentence></sentences>"#;
    let err = parse_semeval_xml(xml, None, &OpinionLexicon::default()).unwrap_err();
    assert!(matches!(err, DataError::MissingAttribute { attribute: "polarity", .. }));
}

fn plain(id: &str, sentence: &str) -> Entry {
    Entry::Plain(Instance::new(id, sentence, "x", Polarity::Neutral, false).unwrap())
}

#[test]
fn split_forced_by_flag() {
    let d = Dataset::new("d", vec![plain("r1", "anything")]).unwrap();
    let flags = HashMap::from([("r1".to_string(), true)]);
    let (e, i) = split_implicit(&d, Some(&flags), &OpinionLexicon::default()).unwrap();
    assert!(e.is_empty());
    assert_eq!(i.len(), 1);
    assert!(i.entries()[0].instance().implicit);
}

#[test]
fn split_cardinality() {
    let entries: Vec<_> = (0..10).map(|k| plain(&format!("i{k}"), "words here")).collect();
    let d = Dataset::new("d", entries).unwrap();
    let flags: HashMap<_, _> = (0..10).map(|k| (format!("i{k}"), k < 4)).collect();
    let (e, i) = split_implicit(&d, Some(&flags), &OpinionLexicon::default()).unwrap();
    assert_eq!((e.len(), i.len()), (6, 4));
}

#[test]
fn split_lexicon_heuristic() {
    let lex = OpinionLexicon::from_words(["great", "bad", "slow", "tasty", "rude"]);
    let d = Dataset::new(
        "d",
        vec![plain("a", "great battery"), plain("b", "Battery lasted two hours."), plain("c", "RUDE staff!")],
    )
    .unwrap();
    let (e, i) = split_implicit(&d, None, &lex).unwrap();
    let ids = |d: &Dataset| d.iter().map(|e| e.id().to_string()).collect::<Vec<_>>();
    assert_eq!(ids(&e), ["a", "c"]);
    assert_eq!(ids(&i), ["b"]);
}

#[test]
fn split_missing_flags_listed() {
    let d = Dataset::new("d", vec![plain("a", "x"), plain("b", "y"), plain("c", "z")]).unwrap();
    let flags = HashMap::from([("b".to_string(), true)]);
    match split_implicit(&d, Some(&flags), &OpinionLexicon::default()) {
        Err(DataError::MissingFlags(ids)) => assert_eq!(ids, ["a", "c"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn lexicon_file_loading() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "lex.txt", "# opinion words\nGood\n\nbad\n");
    let lex = OpinionLexicon::load(&p).unwrap();
    assert_eq!(lex.len(), 2);
    assert!(lex.contains("good"));
}

fn arb_polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::Positive), Just(Polarity::Negative), Just(Polarity::Neutral)]
}

fn arb_entry(id: usize) -> impl Strategy<Value = Entry> {
    let text = "[a-zA-Z\u{e9}\u{4e2d} ,.!\"\\\\]{0,12}[a-z]";
    (
        text,
        text,
        arb_polarity(),
        any::<bool>(),
        prop::option::of((text, 0.5f64..=1.0, text, 0.5f64..=1.0, 0u32..5, any::<bool>())),
    )
        .prop_map(move |(sentence, target, polarity, implicit, aug)| {
            let base = Instance::new(format!("id{id}"), sentence, target, polarity, implicit).unwrap();
            match aug {
                None => Entry::Plain(base),
                Some((aspect, ca, opinion, co, epochs, consensus)) => Entry::Augmented(AugmentedInstance {
                    base,
                    aspect,
                    aspect_confidence: ca,
                    opinion,
                    opinion_confidence: co,
                    refine_epochs_used: epochs,
                    consensus_reached: consensus,
                }),
            }
        })
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (0usize..8)
        .prop_flat_map(|n| (0..n).map(arb_entry).collect::<Vec<_>>())
        .prop_map(|entries| Dataset::new("prop", entries).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_then_load_is_identity(d in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prop.jsonl");
        save_jsonl(&d, &p).unwrap();
        let back = load_jsonl(&p).unwrap();
        prop_assert_eq!(back.entries(), d.entries());
        let p2 = dir.path().join("prop2.jsonl");
        save_jsonl(&back, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn split_is_a_partition(d in arb_dataset(), seed in any::<u64>()) {
        let flags: HashMap<String, bool> = d
            .iter()
            .enumerate()
            .map(|(k, e)| (e.id().to_string(), (seed >> (k % 64)) & 1 == 1))
            .collect();
        let (e, i) = split_implicit(&d, Some(&flags), &OpinionLexicon::default()).unwrap();
        prop_assert_eq!(e.len() + i.len(), d.len());
        for entry in e.iter() {
            prop_assert!(!flags[entry.id()]);
            prop_assert!(i.iter().all(|x| x.id() != entry.id()));
        }
        for entry in i.iter() {
            prop_assert!(flags[entry.id()]);
        }
    }
}
