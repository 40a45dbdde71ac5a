import os
from setuptools import setup


# get text of README.md
current_path = os.path.dirname(os.path.realpath(__file__))
with open(os.path.join(current_path, "README.md")) as f:
    readme_text = f.read()

setup(
    name="LegFusion",
    version="0.1.0",
    description="Adaptive LiDAR-IMU-leg odometry fusion for degenerate corridors, with simulator and evaluation tools",
    long_description=readme_text,
    long_description_content_type="text/markdown",
    license="GPLv3",
    python_requires='>=3.9',
    classifiers=[
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering"
    ],
    install_requires=[
        "matplotlib>=3.5",
        "numpy>=1.22",
        "pandas>=1.5",
        "pyyaml",
        "scipy>=1.8"
    ],
    extras_require={
        "test": ["pytest>=7"]
    },
    packages=["LegFusion", "LegFusion.modules"],
    package_data={"LegFusion": ["parameters.yaml"]},
    include_package_data=True,
    entry_points={
        "console_scripts": ["legfusion=LegFusion.__main__:main"]
    }
)
