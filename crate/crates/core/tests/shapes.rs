mod common;

#[test]
fn taps_match_specs_at_224() {
    common::shape_contracts(224).unwrap();
}

#[test]
fn taps_match_specs_at_256() {
    common::shape_contracts(256).unwrap();
}

#[test]
fn taps_match_specs_at_512() {
    common::shape_contracts(512).unwrap();
}
