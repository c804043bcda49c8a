/// Reference first-round sizes at 90% stopping probability, alpha 0.1, delta 1.
/// Columns: state, margin, end-of-round BRAVO draws and distinct ballots,
/// Athena draws and distinct ballots, selection-ordered BRAVO draws and distinct ballots.
pub type Row = (
    &'static str,
    f64,
    u64,
    u64,
    u64,
    u64,
    Option<u64>,
    Option<u64>,
);

pub const FIRST_ROUNDS: &[Row] = &[
    ("Alabama", 0.2875, 181, 181, 94, 94, Some(122), Some(122)),
    ("Alaska", 0.1677, 590, 590, 295, 295, Some(396), Some(396)),
    (
        "Arizona",
        0.0378,
        10732,
        10710,
        5204,
        5199,
        Some(7_227),
        Some(7_217),
    ),
    ("Arkansas", 0.2857, 187, 187, 96, 96, Some(128), Some(128)),
    ("California", 0.3226, 148, 148, 79, 79, Some(99), Some(99)),
    (
        "Colorado",
        0.0537,
        5475,
        5470,
        2676,
        2675,
        Some(3_687),
        Some(3_685),
    ),
    (
        "Connecticut",
        0.1428,
        748,
        748,
        374,
        374,
        Some(502),
        Some(502),
    ),
    (
        "Delaware",
        0.1200,
        1057,
        1056,
        523,
        523,
        Some(716),
        Some(716),
    ),
    (
        "DistrictOfColumbia",
        0.9139,
        15,
        15,
        8,
        8,
        Some(10),
        Some(10),
    ),
    (
        "Florida",
        0.0124,
        96608,
        96115,
        46563,
        46449,
        Some(65_051),
        Some(64_827),
    ),
    (
        "Georgia",
        0.0532,
        5266,
        5263,
        2567,
        2567,
        Some(3_555),
        Some(3_554),
    ),
    ("Hawaii", 0.3488, 128, 128, 68, 68, Some(86), Some(86)),
    ("Idaho", 0.3662, 120, 120, 64, 64, Some(83), Some(83)),
    ("Illinois", 0.1804, 474, 474, 242, 242, Some(318), Some(318)),
    ("Indiana", 0.2023, 374, 374, 187, 187, Some(254), Some(254)),
    (
        "Iowa",
        0.1013,
        1520,
        1520,
        753,
        753,
        Some(1_024),
        Some(1_024),
    ),
    ("Kansas", 0.2222, 318, 318, 162, 162, Some(215), Some(215)),
    ("Kentucky", 0.3134, 155, 155, 79, 79, Some(104), Some(104)),
    (
        "Louisiana",
        0.2034,
        365,
        365,
        182,
        182,
        Some(247),
        Some(247),
    ),
    (
        "Maine",
        0.0319,
        15202,
        15049,
        7358,
        7322,
        Some(10_238),
        Some(10_169),
    ),
    ("Maryland", 0.2803, 197, 197, 98, 98, Some(132), Some(132)),
    (
        "Massachusetts",
        0.2930,
        180,
        180,
        93,
        93,
        Some(122),
        Some(122),
    ),
    (
        "Michigan", 0.0024, 2618926, 2018381, 1259688, 1107933, None, None,
    ),
    (
        "Minnesota",
        0.0166,
        56680,
        56139,
        27421,
        27294,
        Some(38_185),
        Some(37_939),
    ),
    (
        "Mississippi",
        0.1818,
        453,
        453,
        224,
        224,
        Some(302),
        Some(302),
    ),
    ("Missouri", 0.1964, 401, 401, 201, 201, Some(267), Some(267)),
    ("Montana", 0.2222, 320, 320, 164, 164, Some(217), Some(217)),
    ("Nebraska", 0.2710, 213, 213, 110, 110, Some(144), Some(144)),
    (
        "Nevada",
        0.0259,
        22943,
        22711,
        11110,
        11056,
        Some(15_462),
        Some(15_357),
    ),
    (
        "NewHampshire",
        0.0039,
        1007590,
        552067,
        475357,
        351311,
        None,
        None,
    ),
    (
        "NewJersey",
        0.1457,
        703,
        703,
        350,
        350,
        Some(478),
        Some(478),
    ),
    (
        "NewMexico",
        0.0930,
        1888,
        1886,
        934,
        934,
        Some(1_276),
        Some(1_275),
    ),
    ("NewYork", 0.2354, 272, 272, 140, 140, Some(186), Some(186)),
    (
        "NorthCarolina",
        0.0381,
        10330,
        10319,
        5000,
        4998,
        Some(6_961),
        Some(6_956),
    ),
    ("NorthDakota", 0.3962, 98, 98, 55, 55, Some(70), Some(70)),
    (
        "Ohio",
        0.0854,
        2077,
        2077,
        1018,
        1018,
        Some(1_403),
        Some(1_403),
    ),
    ("Oklahoma", 0.3861, 101, 101, 55, 55, Some(69), Some(69)),
    ("Oregon", 0.1231, 1068, 1068, 535, 535, Some(724), Some(724)),
    (
        "Pennsylvania",
        0.0075,
        265245,
        259621,
        127792,
        126477,
        None,
        None,
    ),
    (
        "RhodeIsland",
        0.1662,
        562,
        562,
        280,
        280,
        Some(382),
        Some(382),
    ),
    (
        "SouthCarolina",
        0.1492,
        683,
        683,
        344,
        344,
        Some(460),
        Some(460),
    ),
    (
        "SouthDakota",
        0.3194,
        154,
        154,
        79,
        79,
        Some(102),
        Some(102),
    ),
    (
        "Tennessee",
        0.2725,
        206,
        206,
        106,
        106,
        Some(138),
        Some(138),
    ),
    (
        "Texas",
        0.0943,
        1706,
        1706,
        833,
        833,
        Some(1_150),
        Some(1_150),
    ),
    ("Utah", 0.2477, 329, 329, 165, 165, Some(220), Some(220)),
    ("Vermont", 0.3037, 180, 180, 91, 91, Some(122), Some(122)),
    (
        "Virginia",
        0.0565,
        4790,
        4788,
        2329,
        2329,
        Some(3_229),
        Some(3_228),
    ),
    (
        "Washington",
        0.1757,
        525,
        525,
        265,
        265,
        Some(355),
        Some(355),
    ),
    ("WestVirginia", 0.4432, 76, 76, 41, 41, Some(51), Some(51)),
    (
        "Wisconsin",
        0.0082,
        229503,
        220878,
        110622,
        108592,
        None,
        None,
    ),
    ("Wyoming", 0.5141, 59, 59, 29, 29, Some(40), Some(40)),
];
