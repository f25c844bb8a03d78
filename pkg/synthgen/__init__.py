from synthgen.generator import (ClassSpec, FamilyPrototype, GenConfig, SyntheticGenerator, generate_dataset,
                                object_raster, render_template)
