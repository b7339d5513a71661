//! Bundled experiment configs, compiled into the binary so
//! `ergoflow run <name>` works without files on disk.

pub const FIXTURES: &[(&str, &str)] = &[
    ("thmA_kronecker", include_str!("../fixtures/thmA_kronecker.toml")),
    ("thmB_characters", include_str!("../fixtures/thmB_characters.toml")),
    ("thmC_box", include_str!("../fixtures/thmC_box.toml")),
    ("thmD1_product", include_str!("../fixtures/thmD1_product.toml")),
    ("thmD2_pair", include_str!("../fixtures/thmD2_pair.toml")),
    ("corollary_sl2", include_str!("../fixtures/corollary_sl2.toml")),
    ("deg1_failure", include_str!("../fixtures/deg1_failure.toml")),
    ("deg2_contrast", include_str!("../fixtures/deg2_contrast.toml")),
    ("decomposition", include_str!("../fixtures/decomposition.toml")),
    (
        "suspension_transfer",
        include_str!("../fixtures/suspension_transfer.toml"),
    ),
    (
        "corrupted_tolerance",
        include_str!("../fixtures/corrupted_tolerance.toml"),
    ),
    ("box_k5_invalid", include_str!("../fixtures/box_k5_invalid.toml")),
];

pub fn fixture(name: &str) -> Option<&'static str> {
    FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn names() -> Vec<&'static str> {
    FIXTURES.iter().map(|(n, _)| *n).collect()
}
