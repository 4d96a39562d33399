use std::collections::BTreeSet;
use std::path::Path;

fn book() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../book/src"))
}

/// Chapter files linked from the summary.
fn linked() -> BTreeSet<String> {
    let summary = std::fs::read_to_string(book().join("SUMMARY.md")).unwrap();
    summary
        .split("](")
        .skip(1)
        .map(|rest| rest[..rest.find(')').unwrap()].to_string())
        .collect()
}

#[test]
fn every_chapter_is_linked_and_every_link_exists() {
    let on_disk: BTreeSet<String> = std::fs::read_dir(book())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".md") && n != "SUMMARY.md")
        .collect();
    assert_eq!(linked(), on_disk);
}

#[test]
fn every_chapter_runs_as_a_doc_test() {
    let lib = include_str!("../src/lib.rs");
    for chapter in linked() {
        assert!(
            lib.contains(&format!("include_str!(\"../../../book/src/{chapter}\")")),
            "{chapter} is not included in src/lib.rs"
        );
    }
}
