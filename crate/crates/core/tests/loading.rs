use std::fs::File;
use std::io::BufReader;

use flest_core::data::{build_vocab, load_triples, partition, SplitRatios};

fn fixture() -> Vec<(String, String, String)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ten_lines.txt");
    load_triples(BufReader::new(File::open(path).unwrap())).unwrap()
}

fn t(h: &str, r: &str, tl: &str) -> (String, String, String) {
    (h.into(), r.into(), tl.into())
}

#[test]
fn ten_line_fixture_loads_in_order() {
    let expected = vec![
        t("00260493", "_hypernym", "00255710"),
        t("00260493", "_also_see", "01789123"),
        t("01789123", "_hypernym", "00260493"),
        t("09920106", "_derivationally_related_form", "00260493"),
        t("00255710", "_hypernym", "09920106"),
        t("04552348", "_member_meronym", "09920106"),
        t("04552348", "_hypernym", "00255710"),
        t("00260493", "_hypernym", "04552348"),
        t("01789123", "_synset_domain_topic_of", "04552348"),
        t("09920106", "_also_see", "01789123"),
    ];
    assert_eq!(fixture(), expected);
}

#[test]
fn fixture_vocabulary_by_first_appearance() {
    let v = build_vocab(&fixture());
    assert_eq!(v.entities(), ["00260493", "00255710", "01789123", "09920106", "04552348"]);
    assert_eq!(
        v.relations(),
        ["_hypernym", "_also_see", "_derivationally_related_form", "_member_meronym", "_synset_domain_topic_of"]
    );
}

#[test]
fn fixture_partition_covers_every_line_once() {
    let triples = fixture();
    let shards = partition(&triples, 3, 11, SplitRatios::TRAIN_ONLY).unwrap();
    let mut seen: Vec<usize> = shards.iter().flat_map(|s| s.manifest().map(|(i, _)| i)).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());
    let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 10);
    assert!(sizes.iter().all(|&n| (3..=4).contains(&n)));
}
