from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='JobRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('rank', 'Rank'), ('criteria', 'Criteria'), ('explain', 'Explain'), ('evaluate', 'Evaluate'), ('fairness', 'Fairness'), ('mine_negatives', 'Mine negatives'), ('fixture', 'Fixture'), ('validate', 'Validate')], max_length=30, verbose_name='command')),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('partial', 'Completed with failures'), ('failed', 'Failed')], default='pending', max_length=20, verbose_name='status')),
                ('config_digest', models.CharField(blank=True, max_length=64, verbose_name='config digest')),
                ('backend_identity', models.CharField(blank=True, max_length=255, verbose_name='backend identity')),
                ('output_dir', models.CharField(blank=True, max_length=1024, verbose_name='output directory')),
                ('warnings_count', models.PositiveIntegerField(default=0, verbose_name='warnings')),
                ('errors_count', models.PositiveIntegerField(default=0, verbose_name='errors')),
                ('error_message', models.TextField(blank=True, verbose_name='error message')),
                ('provenance', models.JSONField(blank=True, default=dict, verbose_name='provenance')),
                ('started_at', models.DateTimeField(blank=True, null=True, verbose_name='started at')),
                ('completed_at', models.DateTimeField(blank=True, null=True, verbose_name='completed at')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='created at')),
            ],
            options={
                'verbose_name': 'job run',
                'verbose_name_plural': 'job runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
