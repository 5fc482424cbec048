"""Hand-built inputs shared by the unit and acceptance tests."""

# (candidate, reference) pairs: identical, disjoint, reordered, repeated words,
# stem-only matches, length mismatches and empty sides
METRIC_PAIRS = [
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("the cat", "the cat sat on the mat"),
    ("mat the on sat cat the", "the cat sat on the mat"),
    ("the the the the", "the cat"),
    ("spiculated mass upper outer quadrant", "spiculated masses in the upper outer quadrant"),
    ("no suspicious calcification", "no suspicious calcifications seen"),
    ("dense breast tissue", "fatty breast tissue"),
    ("bi rads 4c", "bi rads 4a"),
    ("left breast mass", "right breast mass with distortion"),
    ("grouped microcalcifications", "grouped microcalcifications in the left breast"),
    ("architectural distortion noted", "architectural distortion is noted"),
    ("heterogeneously dense tissue obscuring masses", "heterogeneously dense parenchyma"),
    ("a b c d e f", "f e d c b a"),
    ("a b a b a b", "a b"),
    ("calcified lymph node in axilla", "axillary lymph node calcified"),
    ("normal study", "no abnormality detected"),
    ("mass mass mass", "mass"),
    ("benign appearing nodule", "benignly appearing nodules"),
    ("scattered fibroglandular densities", "scattered areas of fibroglandular density"),
    ("focal asymmetry retroareolar", "retroareolar focal asymmetry"),
    ("", "some reference text"),
    ("candidate only", ""),
    ("skin thickening and nipple retraction", "nipple retraction with skin thickening"),
    ("irregular mass irregular margins", "irregular mass with spiculated margins"),
]

# five-document corpus for the CIDEr-D oracle
CIDER_CORPUS = [
    ("spiculated mass in the upper outer quadrant", "spiculated mass upper outer quadrant left breast"),
    ("scattered fibroglandular densities", "scattered fibroglandular densities no mass"),
    ("grouped microcalcifications", "grouped pleomorphic microcalcifications in the right breast"),
    ("no suspicious findings bi rads 1", "no suspicious mass or calcification bi rads 1"),
    ("extremely dense breasts", "extremely dense breast tissue which may obscure masses"),
]

# LoRA configuration ablation (published values)
ABLATION = {
    "Baseline": [0.0025, 0.0684, 0.0082, 0.0613, 0.1000, 0.1745, 0.0636, 0.0000, 0.0000],
    "r=16, α=8": [0.1870, 0.4657, 0.2721, 0.4513, 0.5193, 0.4827, 0.4537, 0.4510, 0.4418],
    "r=32, α=8": [0.2550, 0.5305, 0.3449, 0.5198, 0.5762, 0.5426, 0.5168, 0.3922, 0.5686],
    "r=64, α=8": [0.2449, 0.5166, 0.3314, 0.5032, 0.5433, 0.5173, 0.4969, 0.3137, 0.5294],
    "r=16, α=16": [0.2223, 0.5119, 0.3095, 0.4968, 0.5541, 0.5180, 0.4978, 0.4902, 0.3529],
    "r=32, α=16": [0.3075, 0.5750, 0.3980, 0.5691, 0.6152, 0.5818, 0.5610, 0.3529, 0.5582],
    "r=64, α=16": [0.2694, 0.5280, 0.3522, 0.5188, 0.5608, 0.5378, 0.5195, 0.3725, 0.5490],
}

# backbone comparison (published values)
BACKBONES = {
    "MedGemma-4B": [0.3075, 0.5750, 0.3980, 0.5691, 0.6152, 0.5818, 0.5610, 0.3529, 0.5582],
    "Qwen2.5-VL-7B": [0.3212, 0.5685, 0.4103, 0.5634, 0.5803, 0.5627, 0.5509, 0.4510, 0.4510],
    "Phi-3.5-4.2B": [0.0880, 0.3673, 0.1736, 0.3559, 0.3783, 0.3540, 0.3367, 0.2745, 0.1176],
    "CLIP": [0.1462, 0.4840, 0.3181, 0.4778, 0.4570, 0.3890, 0.4050, 0.1176, 0.3333],
    "MedCLIP": [0.2202, 0.4983, 0.3353, 0.4891, 0.5371, 0.4740, 0.4831, 0.1176, 0.4902],
}

TABLE_ROWS = ["BLEU-1", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR", "CIDEr",
              "F1 (word-level)", "Density Accuracy", "BI-RADS Accuracy"]


def as_bundles(table):
    return {run: dict(zip(TABLE_ROWS, values)) for run, values in table.items()}


# 30 synthetic reports with gold (BI-RADS, density); three phrasings per BI-RADS value
CLINICAL_CORPUS = [
    ("Almost entirely fatty breasts. Incomplete study, additional views needed. BI-RADS 0.", "0", "a"),
    ("ACR density b. Recall for spot compression. Assessment: BI-RADS category 0", "0", "b"),
    ("Heterogeneously dense tissue. Final assessment bi-rads: 0", "0", "c"),
    ("Extremely dense breasts. No abnormality. BI-RADS 1", "1", "d"),
    ("Predominantly fatty parenchyma, negative study. BIRADS 1.", "1", "a"),
    ("Scattered areas of fibroglandular density; negative. BI-RADS category 1", "1", "b"),
    ("Fibro-fatty parenchyma with benign vascular calcifications. BI-RADS 2", "2", "a"),
    ("Density category c. Benign calcified lymph node. ACR BI-RADS 2", "2", "c"),
    ("Extremely dense tissue. Stable benign findings, BI RADS 2.", "2", "d"),
    ("Scattered fibroglandular densities. Probably benign nodule. BI-RADS 3", "3", "b"),
    ("Breast density: d. Circumscribed oval mass, short interval follow-up. BI-RADS category 3.", "3", "d"),
    ("ACR a. Probably benign focal asymmetry. bi-rads 3", "3", "a"),
    ("Heterogeneously dense. Left benign-appearing mass, right spiculated mass. BI-RADS 3 and 5", "3 and 5", "c"),
    ("Fatty breasts. Bilateral findings: BI-RADS 3 and 5.", "3 and 5", "a"),
    ("Density is b. Benign left lesion with malignant right lesion, BI-RADS categories 3 and 5", "3 and 5", "b"),
    ("Extremely dense breast. Suspicious abnormality, biopsy advised. BI-RADS 4", "4", "d"),
    ("Scattered fibroglandular tissue. Indeterminate mass. BI-RADS category 4.", "4", "b"),
    ("Heterogeneously dense parenchyma. Suspicious calcifications. BI-RADS: 4", "4", "c"),
    ("Fatty breast. Low suspicion mass. BI-RADS 4a", "4a", "a"),
    ("ACR density c. Low suspicion grouped microcalcifications. BI-RADS 4A.", "4a", "c"),
    ("Extremely dense. Partially circumscribed mass. BI-RADS category 4 a", "4a", "d"),
    ("Scattered fibroglandular densities. Moderate suspicion. BI-RADS 4b", "4b", "b"),
    ("Fibrofatty breast. Indistinct mass, moderate suspicion. BI-RADS-4B", "4b", "a"),
    ("Category c density. Amorphous calcifications. BI-RADS 4b.", "4b", "c"),
    ("Heterogeneously dense. Spiculated mass with architectural distortion. BI-RADS 4c", "4c", "c"),
    ("Extremely dense tissue. Fine linear branching calcifications. BI-RADS category 4C.", "4c", "d"),
    ("Predominantly fatty. High suspicion irregular mass. BI-RADS 4c", "4c", "a"),
    ("Scattered areas of fibroglandular density. Highly suggestive of malignancy. BI-RADS 5", "5", "b"),
    ("ACR density d. Spiculated mass with skin thickening. BI-RADS category 5.", "5", "d"),
    ("Fatty breasts. Large irregular soft opacity. Final assessment: BI-RADS 5", "5", "a"),
]
