mod common;

use nextpoi_core::promptgen::{parse_prompt, render_prompt, DistanceBuckets, DistanceLabel};

#[test]
fn transcribed_example_renders_byte_for_byte() {
    let (parts, expected, _) = common::prompt_example();
    let got = render_prompt(&parts, &DistanceBuckets::default());
    for (i, (g, e)) in got.lines().zip(expected.lines()).enumerate() {
        assert_eq!(g, e, "line {}", i + 1);
    }
    assert_eq!(got, expected);
}

#[test]
fn transcribed_example_parses_back_into_its_parts() {
    let (parts, expected, _) = common::prompt_example();
    let parsed = parse_prompt(&expected).unwrap();
    assert_eq!(parsed.frequency, parts.frequency);
    assert_eq!(parsed.transitions, parts.transitions);
    assert_eq!(parsed.preference, parts.preference);
    assert_eq!(parsed.sequence.len(), 4);
    assert_eq!(parsed.sequence[0].4, None);
    assert!(parsed.sequence[1..].iter().all(|s| s.4.as_deref() == Some(DistanceLabel::Nearby.as_str())));
    assert_eq!(parsed.target_time, "April 14th, 2012, Saturday, 07:15");
}

#[test]
fn example_without_knowledge_drops_the_whole_block() {
    let (mut parts, expected, _) = common::prompt_example();
    parts.preference = None;
    let got = render_prompt(&parts, &DistanceBuckets::default());
    assert!(!got.contains("user_preference"));
    let start = expected.find("<user_preference>").unwrap();
    let end = expected.find("</user_preference>\n\n").unwrap() + "</user_preference>\n\n".len();
    assert_eq!(got, format!("{}{}", &expected[..start], &expected[end..]));
}

#[test]
fn fixture_output_sid_is_not_among_the_sequence_sids() {
    let (parts, _, output) = common::prompt_example();
    let out = nextpoi_core::sid::parse_sid(&output).unwrap();
    assert!(parts.sequence.iter().all(|v| v.sid != out));
    assert!(parts.frequency.iter().any(|(_, s, _)| *s == out));
}
