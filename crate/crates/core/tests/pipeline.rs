mod common;

use common::{check_preserved, preservation_corpus, small_system};
use hytn::pipeline::Route;
use hytn::{extract_nsw, HybridSystem};
use proptest::prelude::*;

#[test]
fn context_is_preserved_and_nsw_free_output_is_fixed() {
    let sys = small_system(3);
    let mut nsw_free = 0;
    let mut neural = 0;
    for text in preservation_corpus(2000, 3) {
        let (out, traces) = sys.normalize(&text);
        check_preserved(&text, &out, &traces).unwrap();
        neural += traces.iter().filter(|t| t.route == Route::Neural).count();
        if extract_nsw(&out).is_empty() {
            nsw_free += 1;
            let (again, t) = sys.normalize(&out);
            assert_eq!(again, out);
            assert!(t.is_empty());
        }
    }
    assert!(nsw_free > 1000, "{nsw_free}");
    assert!(neural > 0);
}

#[test]
fn rules_only_preserves_context() {
    let sys = HybridSystem::builtin().unwrap();
    for text in preservation_corpus(500, 8) {
        let (out, traces) = sys.normalize_rules_only(&text);
        check_preserved(&text, &out, &traces).unwrap();
    }
}

#[test]
fn text_without_nsw_is_returned_unchanged() {
    let sys = HybridSystem::builtin().unwrap();
    for text in ["", "今天天气很好。", "abc def", "🙂🙂", "百分之十"] {
        let (out, traces) = sys.normalize(text);
        assert_eq!(out, text);
        assert!(traces.is_empty());
    }
}

#[test]
fn document_split_matches_sentence_calls() {
    let sys = small_system(4);
    let doc = "会议在10:30开始。比分是3:2！请拨打911";
    let parts = sys.normalize_document(doc, false);
    assert_eq!(parts.len(), 3);
    let joined: String = parts.iter().map(|(s, _)| s.as_str()).collect();
    let expected: String = hytn::pipeline::split_sentences(doc)
        .into_iter()
        .map(|s| sys.normalize(s).0)
        .collect();
    assert_eq!(joined, expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn arbitrary_text_keeps_its_context(text in "[a-z甲乙丙 ，。0-9:.,%$/~-]{0,40}") {
        let sys = HybridSystem::builtin().unwrap();
        let (out, traces) = sys.normalize(&text);
        prop_assert!(check_preserved(&text, &out, &traces).is_ok(), "{:?}", check_preserved(&text, &out, &traces));
    }
}
