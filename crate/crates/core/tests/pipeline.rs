mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use annopipe::pipeline::{
    build_embedding_pipeline, partitioned_map, run_partitioned, DocumentAssembler, Pipeline, SentenceDetector, Stage,
    Tokenizer,
};
use annopipe::tokenize::{
    AnnotatedRecord, Annotation, AnnotatorType, DOCUMENT, EMBEDDING, SENTENCE, SENTENCE_EMBEDDING, TOKEN,
};
use annopipe::{Error, Result};

fn records(texts: &[&str]) -> Vec<AnnotatedRecord> {
    texts.iter().map(|t| AnnotatedRecord::from_text(*t)).collect()
}

fn text_stages() -> Vec<Box<dyn Stage>> {
    vec![
        Box::new(DocumentAssembler),
        Box::new(SentenceDetector::default()),
        Box::new(Tokenizer),
    ]
}

/// Fails on any record whose text contains "boom": by panicking, or by
/// returning an error.
struct Tripwire {
    panic: bool,
    calls: AtomicUsize,
}

impl Stage for Tripwire {
    fn name(&self) -> &str {
        "tripwire"
    }

    fn inputs(&self) -> Vec<String> {
        vec![DOCUMENT.into()]
    }

    fn output(&self) -> String {
        "checked".into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if records.iter().any(|r| r.text.contains("boom")) {
            if self.panic {
                panic!("tripwire hit");
            }
            return Err(Error::InvalidArgument("tripwire hit".into()));
        }
        Ok(records
            .iter()
            .map(|_| vec![Annotation::new(AnnotatorType::Document, 0, 0, "ok")])
            .collect())
    }
}

#[test]
fn stages_append_columns_in_order() {
    let p = Pipeline::new(text_stages()).unwrap();
    assert_eq!(
        p.stage_names(),
        ["document_assembler", "sentence_detector", "tokenizer"]
    );
    let (out, _) = run_partitioned(&p, records(&["One. Two!", "Three"]), 1).unwrap();
    for r in &out {
        let cols: Vec<&str> = r.columns.keys().map(String::as_str).collect();
        assert_eq!(cols, [DOCUMENT, SENTENCE, TOKEN]);
    }
    assert_eq!(out[0].text, "One. Two!");
    assert_eq!(out[0].column(TOKEN).unwrap().len(), 4);
}

#[test]
fn earlier_columns_are_never_modified() {
    let texts = [
        "Alpha beta. Gamma!",
        "  spaced   out  ",
        "",
        "Dr. Who arrived. Then left?",
    ];
    let p = Pipeline::new(text_stages()).unwrap();
    let mut before = records(&texts);
    for stage in p.stages() {
        let refs: Vec<&AnnotatedRecord> = before.iter().collect();
        let new_cols = stage.transform_batch(&refs).unwrap();
        let snapshot: Vec<String> = before.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let mut after = before.clone();
        for (r, c) in after.iter_mut().zip(new_cols) {
            r.columns.insert(stage.output(), c);
        }
        for (a, s) in after.iter().zip(&snapshot) {
            let mut trimmed = a.clone();
            trimmed.columns.shift_remove(&stage.output());
            assert_eq!(&serde_json::to_string(&trimmed).unwrap(), s);
        }
        before = after;
    }
    // and the full run agrees with the stage-by-stage replay
    let full = p.transform(records(&texts)).unwrap();
    assert_eq!(
        serde_json::to_string(&full).unwrap(),
        serde_json::to_string(&before).unwrap()
    );
}

#[test]
fn misordered_stages_are_rejected_at_construction() {
    let err = Pipeline::new(vec![Box::new(DocumentAssembler), Box::new(Tokenizer)]).unwrap_err();
    match err {
        Error::MissingColumn { stage, column } => {
            assert_eq!(stage, "tokenizer");
            assert_eq!(column, SENTENCE);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn overwriting_a_column_is_rejected() {
    let err = Pipeline::new(vec![Box::new(DocumentAssembler), Box::new(DocumentAssembler)]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn empty_input_yields_empty_output() {
    let p = Pipeline::new(text_stages()).unwrap();
    let (out, report) = run_partitioned(&p, Vec::new(), 4).unwrap();
    assert!(out.is_empty());
    assert_eq!(report.records, 0);
    assert_eq!(report.stages.len(), 3);
}

#[test]
fn more_partitions_than_records() {
    let p = Pipeline::new(text_stages()).unwrap();
    let input = records(&["a b", "c. d", "e"]);
    let (one, _) = run_partitioned(&p, input.clone(), 1).unwrap();
    let (eight, report) = run_partitioned(&p, input, 8).unwrap();
    assert_eq!(one, eight);
    assert_eq!(report.num_partitions, 8);
}

#[test]
fn zero_partitions_is_a_config_error() {
    let p = Pipeline::new(text_stages()).unwrap();
    assert!(matches!(run_partitioned(&p, records(&["x"]), 0), Err(Error::Config(_))));
}

#[test]
fn report_is_sane() {
    let p = Pipeline::new(text_stages()).unwrap();
    let texts: Vec<String> = (0..200)
        .map(|i| format!("Record {i} has words. And a second sentence!"))
        .collect();
    let input: Vec<AnnotatedRecord> = texts.iter().map(|t| AnnotatedRecord::from_text(t.as_str())).collect();
    let (_, report) = run_partitioned(&p, input, 2).unwrap();
    assert_eq!(report.records, 200);
    let names: Vec<&str> = report.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["document_assembler", "sentence_detector", "tokenizer"]);
    let stage_sum: f64 = report.stages.iter().map(|s| s.wall_seconds).sum();
    assert!(stage_sum <= report.total_wall_seconds + 1e-3);
    assert!(report.stages.iter().all(|s| s.records_per_sec > 0.0));
    if cfg!(target_os = "linux") {
        assert!(report.peak_memory_bytes.unwrap() > 0);
    }
}

#[test]
fn failing_partition_reports_its_range() {
    for panic in [false, true] {
        let stages: Vec<Box<dyn Stage>> = vec![
            Box::new(DocumentAssembler),
            Box::new(Tripwire {
                panic,
                calls: AtomicUsize::new(0),
            }),
        ];
        let p = Pipeline::new(stages).unwrap();
        let mut texts = vec!["fine"; 8];
        texts[5] = "boom";
        // round-robin over 4 partitions puts record 5 in partition 1
        match run_partitioned(&p, records(&texts), 4) {
            Err(Error::Partition {
                partition,
                start,
                end,
                message,
            }) => {
                assert_eq!(partition, 1);
                assert_eq!((start, end), (1, 6));
                assert!(message.contains("tripwire hit"), "{message}");
            }
            other => panic!("expected a partition error, got {other:?}"),
        }
    }
}

#[test]
fn partitioned_map_restores_input_order() {
    let items: Vec<usize> = (0..23).collect();
    for p in [1, 2, 3, 8, 40] {
        let out = partitioned_map(&items, p, |part| Ok(part.iter().map(|&&x| x * 10).collect())).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 10).collect::<Vec<_>>());
    }
}

#[test]
fn embedding_output_is_byte_identical_across_partition_counts() {
    let vocab = common::fixture_vocab();
    let encoder = common::tiny_encoder(&vocab, 7);
    let pipeline = build_embedding_pipeline(encoder, vocab, 64).unwrap();
    let texts: Vec<String> = common::fixture_csv("test.csv")
        .into_iter()
        .take(1000)
        .map(|e| e.text)
        .collect();
    assert_eq!(texts.len(), 1000);
    let input: Vec<AnnotatedRecord> = texts.iter().map(|t| AnnotatedRecord::from_text(t.as_str())).collect();
    let mut reference: Option<Vec<u8>> = None;
    for p in [1, 2, 4, 8] {
        let (out, report) = run_partitioned(&pipeline, input.clone(), p).unwrap();
        assert_eq!(report.num_partitions, p);
        let bytes = serde_json::to_vec(&out).unwrap();
        match &reference {
            None => {
                let first = &out[0];
                assert_eq!(first.column(SENTENCE_EMBEDDING).unwrap()[0].embeddings.len(), 128);
                assert!(!first.column(EMBEDDING).unwrap().is_empty());
                reference = Some(bytes);
            }
            Some(r) => assert!(r == &bytes, "P={p} output differs from P=1"),
        }
    }
}

#[test]
fn stage_runs_once_per_non_empty_partition() {
    let stage = Arc::new(Tripwire {
        panic: false,
        calls: AtomicUsize::new(0),
    });
    let p = Pipeline::new(vec![Box::new(DocumentAssembler), Box::new(Shared(stage.clone()))]).unwrap();
    let (out, _) = run_partitioned(&p, records(&["a", "b", "c", "d", "e"]), 8).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|r| r.column("checked").unwrap()[0].result == "ok"));
    assert_eq!(stage.calls.load(Ordering::SeqCst), 5);
}

struct Shared(Arc<Tripwire>);

impl Stage for Shared {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn inputs(&self) -> Vec<String> {
        self.0.inputs()
    }
    fn output(&self) -> String {
        self.0.output()
    }
    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        self.0.transform_batch(records)
    }
}
