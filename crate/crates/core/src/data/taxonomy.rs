/// The 31 instrument classes of the total knee arthroplasty tool set,
/// in the order they are tabulated.
pub const TKA_TOOL_NAMES: [&str; 31] = [
    "Femoral Drill Guide",
    "Spherical Mill",
    "Gap Gauge",
    "Hex Driver",
    "Tibial Template",
    "Slap Hammer",
    "Posterior Resection Guide",
    "Tibial Template Medial",
    "Tibial Template Nail",
    "Bearing Inserter Extractor",
    "Tibial Shim",
    "Tibial Resector Stylus",
    "Tibial Impactor",
    "Tibial Groove Cutter",
    "Spigot",
    "Pin Inserter Extractor",
    "MCL Retractor",
    "IM Rod Removal Hook",
    "IM Link",
    "Femoral Impactor",
    "Concise Oxford IM Awl",
    "Femoral Components",
    "Chisel",
    "Cement Removal Chisel",
    "Cannulated IM rod",
    "Bone Collar Remover",
    "Anterior Bone Removal Shaft",
    "Anterior Bone Mill",
    "Ankle Yoke",
    "IM rod pusher",
    "Tibial gap sizing spoon",
];

/// Annotated-image counts per tool, aligned with [`TKA_TOOL_NAMES`].
pub const TKA_TOOL_IMAGE_COUNTS: [u32; 31] = [
    965, 1047, 1116, 1169, 965, 1114, 1057, 935, 1163, 1037, 1193, 990, 1167, 1155, 1110, 1164,
    1032, 1069, 1125, 977, 926, 1000, 1125, 1049, 1079, 1119, 971, 929, 1070, 988, 1078,
];
