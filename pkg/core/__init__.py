from core.domain import (Box, Category, CategoryTaxonomy, DatasetSplit, HyperParams, LabelGate,
                         Role, Sample, SplitRole, ToyImage, role_of)
from core.validation import Violation, validate_split
