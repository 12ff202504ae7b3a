#!/usr/bin/env python

from typing import List

from setuptools import setup

long_description = """
# Cargotrack #

Cargotrack monitors freight trucks: where they are and how much they carry.
Truck-mounted stations report a GPS fix and a payload weight every few
minutes over GSM/GPRS to an ingest service, which keeps an append-only
store that can be paged through, exported as CSV and checked for route
deviations, weight changes and link gaps.

The stations and their cellular link are simulated, so whole fleets can be
run at desk scale and replayed deterministically from a seed.

## Requirements

Python >= 3.9 with the following packages:

  + pandas >= 1.0.0
  + numpy
  + requests
  + aiohttp >= 3.9
  + simpy
  + pyyaml

## Installation

```
pip install --upgrade cargotrack
```

## Usage example ##

```
cargotrack --store store simulate scenarios/acajutla-opico.yaml
cargotrack --store store report --device CI-205-DDE
```

```
import cargotrack
c = cargotrack.FleetClient("store")
df = c.read("CI-205-DDE", "16.05.2022 06:00", "16.05.2022 12:00")
```
"""


def get_install_requirements() -> List[str]:
    with open("requirements.in") as f:
        requirements = f.read().splitlines()
        return requirements


setup(
    name="cargotrack",
    description="Freight truck telemetry: station and link simulation, ingest, "
    "query and analytics",
    long_description=long_description,
    long_description_content_type="text/markdown",
    keywords=["IoT", "telemetry", "fleet tracking", "GPS", "GSM"],
    license="MIT",
    classifiers=[
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Natural Language :: English",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering",
        "Topic :: System :: Networking :: Monitoring",
    ],
    packages=["cargotrack"],
    package_data={"": ["*.md"]},
    python_requires=">=3.9",
    setup_requires=["setuptools_scm"],
    use_scm_version={"write_to": "cargotrack/version.py"},
    install_requires=get_install_requirements(),
    entry_points={"console_scripts": ["cargotrack=cargotrack.cli:main"]},
)
