/// Education levels on a 1 to 5 scale. Values are matched after trimming,
/// lowercasing, collapsing whitespace and straightening apostrophes.
/// Anything else is `None`, and summaries leave it out of averages.
pub fn education_to_numeric(value: &str) -> Option<u8> {
    let key = normalize(value);
    LEVELS
        .iter()
        .find(|(_, names)| names.contains(&key.as_str()))
        .map(|(level, _)| *level)
}

fn normalize(value: &str) -> String {
    value
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

const LEVELS: &[(u8, &[&str])] = &[
    (1, &["high school diploma", "high school"]),
    (
        2,
        &[
            "associate's degree",
            "associate degree",
            "associate's",
            "associate",
            "undergraduate",
            "some college",
            "college",
            "vocational training",
        ],
    ),
    (3, &["bachelor's degree", "bachelor's", "nursing degree"]),
    (4, &["master's degree", "master's"]),
    (
        5,
        &[
            "ph.d.",
            "phd",
            "doctorate degree",
            "doctorate",
            "doctoral degree",
            "jd",
            "juris doctor",
            "juris doctor (jd)",
            "law degree",
            "pharmd",
            "pharmacy degree",
            "dental degree",
            "dentistry degree",
            "md",
            "medical degree",
        ],
    ),
];
