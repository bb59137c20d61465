use sentiment_trend::report::PValueSet;

/// Non-reference rows of the published mixed-model table: name, raw p as
/// printed ("<0.001" read as 0.001), adjusted p as printed.
pub const TABLE2: [(&str, f64, f64); 18] = [
    ("region:Northeast", 0.361, 0.623),
    ("region:South", 0.817, 0.919),
    ("region:West", 0.520, 0.706),
    ("type:Private", 0.035, 0.088),
    ("year:2020", 0.001, 0.001),
    ("year:2021", 0.001, 0.001),
    ("year:2022", 0.001, 0.001),
    ("d1:Yes", 0.919, 0.919),
    ("cchie:DoctoralHigh", 0.037, 0.088),
    ("cchie:DoctoralVeryHigh", 0.012, 0.038),
    ("medical:Yes", 0.343, 0.623),
    ("city_population", 0.875, 0.919),
    ("enrollment", 0.002, 0.009),
    ("doctoral_programs", 0.394, 0.624),
    ("tenure", 0.820, 0.919),
    ("graduate_student", 0.517, 0.706),
    ("selectivity", 0.904, 0.919),
    ("graduation_rate", 0.320, 0.623),
];

pub fn table2_set() -> PValueSet {
    PValueSet::new(TABLE2.iter().map(|(n, p, _)| (n.to_string(), *p)).collect()).unwrap()
}
