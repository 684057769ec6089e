use std::io::Write;

use geoloc::corpus::{ingest, open_corpus};

#[test]
fn large_fixture_count_matches_line_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    let mut expected_bad = 0;
    for i in 0..100_000u64 {
        match i % 997 {
            0 => {
                writeln!(f, "{{\"body\":\"no user\",\"subreddit\":\"a\",\"created_utc\":1,\"parent_kind\":\"comment\",\"submission_id\":\"s\"}}").unwrap();
                expected_bad += 1;
            }
            1 => {
                writeln!(f, "{{truncated").unwrap();
                expected_bad += 1;
            }
            _ => writeln!(
                f,
                "{{\"user\":\"u{}\",\"body\":\"hello there\",\"subreddit\":\"pics\",\"created_utc\":\"{}\",\"parent_kind\":\"{}\",\"submission_id\":\"s{}\"}}",
                i % 5000,
                1_500_000_000 + i,
                if i % 2 == 0 { "comment" } else { "submission" },
                i % 300
            )
            .unwrap(),
        }
    }
    f.flush().unwrap();
    drop(f);

    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    let (comments, skipped) = ingest(&path).unwrap();
    assert_eq!(skipped.len(), expected_bad);
    assert_eq!(comments.len(), lines - skipped.len());
    assert!(comments.iter().all(|c| c.is_reply == c.id.trim_start_matches('L').parse::<u64>().map(|n| (n - 1) % 2 == 0).unwrap()));
    let sidecar = std::fs::read_to_string(dir.path().join("big.jsonl.skipped.log")).unwrap();
    assert_eq!(sidecar.lines().count(), expected_bad);
    assert!(sidecar.starts_with("line 1:"));
}

#[test]
fn streaming_reader_matches_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"x1\",\"user\":\"a\",\"body\":\"b\",\"subreddit\":\"S\",\"created_utc\":5,\"parent_kind\":\"submission\",\"submission_id\":\"q\"}\n\n[1,2]\n",
    )
    .unwrap();
    let mut r = open_corpus(&path).unwrap();
    let got: Vec<_> = r.by_ref().collect::<Result<_, _>>().unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].id, "x1");
    assert_eq!(r.skipped().len(), 1);
    assert_eq!(r.skipped()[0].0, 3);
}
