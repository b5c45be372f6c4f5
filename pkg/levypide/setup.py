from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="levypide",
    version="0.1.0",
    description="Levy PIDE option pricing with large trader feedback and a Riccati HJB portfolio solver",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={'levypide': ['configs/*.cfg']},
    python_requires='>=3.8',
    install_requires=[
        'numpy',
        'scipy',
        'python-dateutil'
    ],
    extras_require={
        'test': ['pytest']
    },
    entry_points={
        'console_scripts': ['levypide=levypide.cli_runner:main']
    }
)
